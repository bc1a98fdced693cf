from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.core.exceptions import ConfigurationError


class Settings(BaseSettings):
    # Application
    APP_NAME: str = "3D SELD Toolkit"
    VERSION: str = "1.0.0"

    # Audio front end
    SAMPLE_RATE: int = 24000
    FRAME_LENGTH: float = 0.040  # seconds
    HOP_LENGTH: float = 0.020  # seconds
    N_MELS: int = 64
    LABEL_HOP: float = 0.1  # seconds per label frame

    # Decoding
    SED_THRESHOLD: float = 0.5
    ACCDOA_THRESHOLD: float = 0.5
    MIN_DISTANCE: float = 0.01  # meters

    # Evaluation
    ANGULAR_THRESHOLD_DEG: float = 20.0
    RELATIVE_DISTANCE_THRESHOLD: float = 1.0

    # Classes
    CLASS_NAMES: List[str] = [
        "speech",
        "clapping",
        "telephone",
        "footsteps",
        "music",
    ]

    # Processing
    MAX_WORKERS: int = 4

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "console"  # console, json
    LOG_FILE: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix="SELD_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


def _normalize_keys(values: Mapping[str, Any], source: str) -> Dict[str, Any]:
    normalized: Dict[str, Any] = {}
    for key, value in values.items():
        name = key.strip().upper()
        if name not in Settings.model_fields:
            raise ConfigurationError(f"Unknown configuration key '{key}' in {source}")
        if name == "CLASS_NAMES" and isinstance(value, str):
            value = [item.strip() for item in value.split(",") if item.strip()]
        normalized[name] = value
    return normalized


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    """Turn repeated ``KEY=VALUE`` command-line items into a dict."""
    overrides: Dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"Override '{pair}' is not of the form KEY=VALUE")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_settings(
    config_file: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> Settings:
    """
    Build settings with precedence defaults < environment < config file < overrides.

    Args:
        config_file: Optional dotenv-style file of KEY=VALUE lines
        overrides: Command-line overrides (keys are case-insensitive)
    """
    layered: Dict[str, Any] = {}

    if config_file is not None:
        path = Path(config_file)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        layered.update(_normalize_keys(dotenv_values(path), str(path)))

    if overrides:
        layered.update(_normalize_keys(overrides, "command-line overrides"))

    try:
        return Settings(**layered)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e

