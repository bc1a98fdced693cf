from .audio import AudioClip, SpectralFeatures, Spectrogram, StftConfig, WindowType
from .augmentation import AcsVariant
from .labels import ClassMap, Clip, EventAnnotation, FrameGrid
from .loss import LossConfig, LossValue, LossWeights, SdeLossKind
from .metrics import ClassCounts, ClassScores, MatchCounts, MatchedPair, MetricsReport, MetricThresholds
from .representation import Activation, DecodeConfig, FormatKind, ReprFormat, TargetTensor
from .scene import EventSpec, RenderedScene, SceneSpec, SourceKind
from .training import ModelConfig, TrainConfig, TrainingRecord, TrainingResult

__all__ = [
    "AudioClip",
    "SpectralFeatures",
    "Spectrogram",
    "StftConfig",
    "WindowType",
    "AcsVariant",
    "ClassMap",
    "Clip",
    "EventAnnotation",
    "FrameGrid",
    "LossConfig",
    "LossValue",
    "LossWeights",
    "SdeLossKind",
    "ClassCounts",
    "ClassScores",
    "MatchCounts",
    "MatchedPair",
    "MetricsReport",
    "MetricThresholds",
    "Activation",
    "DecodeConfig",
    "FormatKind",
    "ReprFormat",
    "TargetTensor",
    "EventSpec",
    "RenderedScene",
    "SceneSpec",
    "SourceKind",
    "ModelConfig",
    "TrainConfig",
    "TrainingRecord",
    "TrainingResult",
]
