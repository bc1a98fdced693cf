"""
Logging configuration for the SELD toolkit.
Provides structlog setup and structured event helpers.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import structlog


def setup_logging(
    log_level: str = "INFO",
    log_format: str = "console",
    log_file: Optional[str] = None,
) -> None:
    """
    Setup structured logging.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: "json" for machine-readable lines, "console" otherwise
        log_file: Optional log file path
    """
    level = getattr(logging, log_level.upper(), logging.INFO)

    handlers: list = [logging.StreamHandler(sys.stderr)]
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path))

    logging.basicConfig(level=level, format="%(message)s", handlers=handlers, force=True)

    # Third-party noise
    logging.getLogger("numba").setLevel(logging.WARNING)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)

    renderer = (
        structlog.processors.JSONRenderer()
        if log_format.lower() == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )

    structlog.configure(
        processors=[
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )


logger = structlog.get_logger("seld")


def log_event(event: str, level: str = "info", **kwargs: Any) -> None:
    """
    Log a structured event with additional context.

    Args:
        event: Event name
        level: Log level
        **kwargs: Additional context data
    """
    getattr(logger, level.lower())(event, **kwargs)


def log_training_step(
    step: int,
    lr: float,
    total: float,
    components: Mapping[str, float],
    **kwargs: Any,
) -> None:
    """
    Log one training step: step, learning rate, total loss and each component.

    Args:
        step: Optimizer step index
        lr: Learning rate used for the step
        total: Weighted total loss
        components: Unweighted loss per objective
        **kwargs: Additional context
    """
    log_event(
        "training_step",
        step=step,
        lr=lr,
        total=total,
        **{f"loss_{name}": value for name, value in components.items()},
        **kwargs,
    )


def log_clip_processing(
    path: str,
    stage: str,
    status: str,
    duration_ms: Optional[float] = None,
    error: Optional[str] = None,
    **kwargs: Any,
) -> None:
    """
    Log per-file pipeline events (simulate, extract, predict, ...).

    Args:
        path: File being processed
        stage: Pipeline stage
        status: started, completed or failed
        duration_ms: Processing duration in milliseconds
        error: Error message (if any)
    """
    log_event(
        "clip_processing",
        level="error" if error else "info",
        path=path,
        stage=stage,
        status=status,
        duration_ms=duration_ms,
        error=error,
        **kwargs,
    )


def log_performance_metric(
    metric_name: str,
    value: float,
    unit: Optional[str] = None,
    tags: Optional[Dict[str, str]] = None,
    **kwargs: Any,
) -> None:
    """Log a single named measurement."""
    log_event(
        "performance_metric",
        metric_name=metric_name,
        value=value,
        unit=unit,
        tags=tags,
        **kwargs,
    )
