"""
Toy-scale SELD network with a multi-branch output head.

The trunk is a small convolutional encoder followed by a GRU; the label
rate is reached by averaging ``time_pool`` STFT frames. Every output branch
has two FC layers and the activation its representation prescribes.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import structlog
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.core.exceptions import (
    CheckpointError,
    FormatMismatchError,
    ModelStateError,
    ShapeMismatchError,
    StorageError,
)
from app.schemas.audio import FEATURE_CHANNELS, SpectralFeatures
from app.schemas.representation import Activation, ReprFormat, TargetTensor
from app.schemas.training import ModelConfig
from app.services.storage import LocalStorage

logger = structlog.get_logger()

CHECKPOINT_MAGIC = "SELD-CKPT"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    Activation.SIGMOID: torch.sigmoid,
    Activation.TANH: torch.tanh,
    Activation.RELU: F.relu,
    Activation.LINEAR: lambda x: x,
}


class ConvBlock(nn.Module):
    """Conv2D -> ReLU -> average pooling along frequency only."""

    def __init__(self, in_channels: int, out_channels: int, freq_pool: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1)
        self.pool = nn.AvgPool2d(kernel_size=(1, freq_pool))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(F.relu(self.conv(x)))


class OutputBranch(nn.Module):
    """FC -> ReLU -> FC -> branch activation."""

    def __init__(self, in_features: int, hidden: int, out_features: int, activation: Activation):
        super().__init__()
        self.fc1 = nn.Linear(in_features, hidden)
        self.fc2 = nn.Linear(hidden, out_features)
        self.activation = activation

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return _ACTIVATIONS[self.activation](self.fc2(F.relu(self.fc1(x))))


def _fan_in_uniform(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Conv2d)):
        fan_in = module.weight[0].numel()
        bound = 1.0 / math.sqrt(fan_in)
        nn.init.uniform_(module.weight, -bound, bound)
        nn.init.uniform_(module.bias, -bound, bound)


class SeldModel(nn.Module):
    """
    CRNN trunk with Q output branches.

    Input features are (B, T, 7, F); outputs are one (B, T_label, N_q)
    tensor per branch.
    """

    def __init__(self, config: ModelConfig, zero_init_heads: bool = True):
        super().__init__()
        if config.in_channels != FEATURE_CHANNELS:
            raise ShapeMismatchError(f"model expects {FEATURE_CHANNELS} feature channels, got {config.in_channels}")
        self.config = config

        blocks = []
        in_channels = config.in_channels
        for out_channels, factor in zip(config.conv_channels, config.freq_pool):
            blocks.append(ConvBlock(in_channels, out_channels, factor))
            in_channels = out_channels
        self.convs = nn.Sequential(*blocks)
        self.gru = nn.GRU(in_channels * config.pooled_mels, config.seq_hidden, batch_first=True)

        fmt = config.format
        self.heads = nn.ModuleList(
            OutputBranch(config.seq_hidden, config.head_hidden, dim, act)
            for dim, act in zip(fmt.dims, fmt.activations)
        )

        self.apply(_fan_in_uniform)
        if zero_init_heads:
            for head in self.heads:
                nn.init.zeros_(head.fc2.weight)
                # ReLU has no gradient at 0, so distance heads start above it
                bias = config.distance_init if head.activation == Activation.RELU else 0.0
                nn.init.constant_(head.fc2.bias, bias)

        self._cache: Optional[List[torch.Tensor]] = None

    @property
    def format(self) -> ReprFormat:
        return self.config.format

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def label_frames(self, n_stft_frames: int) -> int:
        return max(1, math.ceil(n_stft_frames / self.config.time_pool))

    def forward_batch(self, x: torch.Tensor, n_label_frames: Optional[int] = None) -> List[torch.Tensor]:
        """
        Args:
            x: Features, (B, T, 7, F)
            n_label_frames: Output length; input is zero-padded or cropped to
                ``n_label_frames * time_pool`` STFT frames
        """
        if x.ndim != 4 or x.shape[2] != self.config.in_channels or x.shape[3] != self.config.n_mels:
            raise ShapeMismatchError(
                f"expected features (B, T, {self.config.in_channels}, {self.config.n_mels}), got {tuple(x.shape)}"
            )
        B, T = x.shape[0], x.shape[1]
        if n_label_frames is None:
            n_label_frames = self.label_frames(T)
        target = n_label_frames * self.config.time_pool
        if T < target:
            x = F.pad(x, (0, 0, 0, 0, 0, target - T))
        elif T > target:
            x = x[:, :target]

        x = x.permute(0, 2, 1, 3)  # (B, 7, T, F)
        x = self.convs(x)  # (B, ch, T, F')
        x = x.permute(0, 2, 1, 3).reshape(B, target, -1)
        x, _ = self.gru(x)
        x = x.reshape(B, n_label_frames, self.config.time_pool, -1).mean(dim=2)

        outputs = [head(x) for head in self.heads]
        # no backward state under no_grad
        self._cache = outputs if torch.is_grad_enabled() else None
        return outputs

    def forward(self, features: SpectralFeatures, n_label_frames: Optional[int] = None) -> TargetTensor:
        """Run one clip and return its branch outputs; the graph is kept for ``backward``."""
        dtype = next(self.parameters()).dtype
        x = torch.tensor(features.data, dtype=dtype).unsqueeze(0)
        outputs = self.forward_batch(x, n_label_frames)
        branches = tuple(o[0].detach().cpu().numpy().astype(np.float64) for o in outputs)
        return TargetTensor(branches=branches, format=self.format)

    def backward(self, grads: Sequence[np.ndarray]) -> Dict[str, torch.Tensor]:
        """
        Parameter gradients for given loss gradients w.r.t. the cached outputs.

        ``grads`` holds one array per branch, shaped like the last forward
        output with or without its batch axis.
        """
        if self._cache is None:
            raise ModelStateError("backward called without a cached forward pass")
        outputs = self._cache
        if len(grads) != len(outputs):
            raise ShapeMismatchError(f"expected {len(outputs)} branch gradients, got {len(grads)}")

        grad_outputs = []
        for name, out, g in zip(self.format.branch_names, outputs, grads):
            g = torch.as_tensor(np.asarray(g), dtype=out.dtype)
            if g.numel() != out.numel():
                raise ShapeMismatchError(
                    f"gradient for branch '{name}' has shape {tuple(g.shape)}, output is {tuple(out.shape)}"
                )
            grad_outputs.append(g.reshape(out.shape))

        names, params = zip(*self.named_parameters())
        param_grads = torch.autograd.grad(outputs, params, grad_outputs=grad_outputs, allow_unused=True)
        self._cache = None
        return {
            name: g if g is not None else torch.zeros_like(p)
            for name, p, g in zip(names, params, param_grads)
        }


def save_checkpoint(path: Union[str, Path], model: SeldModel, extra: Optional[Dict[str, object]] = None) -> Path:
    """Write an immutable snapshot: magic, version, format, config and weights."""
    storage = LocalStorage()
    target = storage.resolve(path)
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "format": model.format.kind.value,
        "n_classes": model.format.n_classes,
        "model_config": model.config.model_dump(mode="json"),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    with storage.atomic_path(target, suffix=".pt") as tmp:
        torch.save(payload, tmp)
    logger.info("Checkpoint saved", path=str(target), format=payload["format"], parameters=model.n_parameters())
    return target


def load_checkpoint(path: Union[str, Path], expected_format: Optional[str] = None) -> SeldModel:
    """
    Rebuild a model from a checkpoint.

    Raises:
        CheckpointError: unreadable file, wrong magic/version or weights
            that do not fit the stored config
        FormatMismatchError: stored format differs from ``expected_format``
    """
    if not Path(path).is_file():
        raise StorageError("checkpoint not found", str(path))
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a SELD checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path} has unsupported checkpoint version {payload.get('version')}")
    if expected_format is not None and payload["format"] != str(getattr(expected_format, "value", expected_format)):
        raise FormatMismatchError(
            f"checkpoint {path} holds a {payload['format']} model, expected {getattr(expected_format, 'value', expected_format)}"
        )

    try:
        config = ModelConfig.model_validate(payload["model_config"])
        model = SeldModel(config)
        model.load_state_dict(payload["state_dict"])
    except (KeyError, RuntimeError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} does not match its model config: {e}") from e
    model.eval()
    logger.debug("Checkpoint loaded", path=str(path), format=payload["format"])
    return model
