import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import structlog

from app.core.logging import log_clip_processing

logger = structlog.get_logger()

T = TypeVar("T")
R = TypeVar("R")


def _run_one(stage: str, label: Callable[[T], str], fn: Callable[[T], R], item: T) -> R:
    start = time.perf_counter()
    name = label(item)
    try:
        result = fn(item)
    except Exception as e:
        log_clip_processing(
            name,
            stage=stage,
            status="failed",
            duration_ms=(time.perf_counter() - start) * 1000.0,
            error=str(e),
        )
        raise
    log_clip_processing(
        name,
        stage=stage,
        status="completed",
        duration_ms=(time.perf_counter() - start) * 1000.0,
    )
    return result


def run_batch(
    items: Sequence[T],
    fn: Callable[[T], R],
    stage: str,
    max_workers: int = 1,
    label: Optional[Callable[[T], str]] = None,
) -> List[R]:
    """
    Apply ``fn`` to every item with a bounded thread pool.

    Results come back in input order. Every submitted item runs to completion
    before the failure with the lowest index is re-raised.

    Args:
        items: Work items (usually paths)
        fn: Per-item job
        stage: Pipeline stage name for the log records
        max_workers: Pool size; 1 runs inline
        label: Item-to-name function for logs (defaults to str)
    """
    label = label or str
    logger.info("Batch started", stage=stage, items=len(items), workers=max_workers)

    if max_workers <= 1 or len(items) <= 1:
        results = [_run_one(stage, label, fn, item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = [pool.submit(_run_one, stage, label, fn, item) for item in items]
        # the pool has drained here; the lowest failing index is raised
        results = [future.result() for future in futures]

    logger.info("Batch completed", stage=stage, items=len(items))
    return results
