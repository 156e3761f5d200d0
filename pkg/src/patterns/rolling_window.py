"""Rolling window parallelism for bounded concurrent work with ordered results."""

import asyncio
import logging
from collections import deque
from typing import Awaitable, Callable, Dict, List, Optional, Sequence, TypeVar

from ..errors import PrismError

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


class RollingWindowError(PrismError, RuntimeError):
    """Raised when one item of a rolling-window run fails."""

    def __init__(self, index: int, item, cause: BaseException):
        self.index = index
        self.item = item
        super().__init__(f"Failed to process item {index} ({item!r}): {cause}")


class RollingWindowProgress:
    """Progress counters for a rolling window run."""

    def __init__(self, total: int):
        self.total = total
        self.completed = 0
        self.in_progress = 0

    @property
    def percentage(self) -> float:
        if self.total == 0:
            return 100.0
        return self.completed / self.total * 100

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "completed": self.completed,
            "in_progress": self.in_progress,
            "percentage": self.percentage,
        }


async def process_with_rolling_window(
    items: Sequence[T],
    process_fn: Callable[[T], Awaitable[R]],
    max_concurrent: int = 4,
    progress_callback: Optional[Callable[[RollingWindowProgress], None]] = None,
) -> List[R]:
    """
    Process items keeping at most ``max_concurrent`` tasks in flight.

    A new task starts as soon as any running one completes. Results come back
    in the order of ``items`` regardless of completion order, so callers that
    seed work per item get output independent of scheduling.

    Args:
        items: Items to process
        process_fn: Async function applied to each item
        max_concurrent: Maximum number of parallel operations
        progress_callback: Optional callback invoked after each completion

    Returns:
        One result per item, in input order

    Raises:
        RollingWindowError: If any item fails (remaining tasks are cancelled)
    """
    if not items:
        return []
    if max_concurrent < 1:
        raise ValueError(f"max_concurrent must be >= 1, got {max_concurrent}")

    progress = RollingWindowProgress(total=len(items))
    remaining = deque(enumerate(items))
    running: Dict[asyncio.Task, int] = {}
    results: Dict[int, R] = {}

    def start_next() -> None:
        index, item = remaining.popleft()
        running[asyncio.create_task(process_fn(item))] = index

    while len(running) < max_concurrent and remaining:
        start_next()
    progress.in_progress = len(running)

    while running:
        done, _ = await asyncio.wait(running.keys(), return_when=asyncio.FIRST_COMPLETED)
        for task in done:
            index = running.pop(task)
            try:
                results[index] = task.result()
            except Exception as e:
                for other in running:
                    other.cancel()
                raise RollingWindowError(index, items[index], e) from e
            progress.completed += 1
            if remaining:
                start_next()
            progress.in_progress = len(running)
            if progress_callback:
                progress_callback(progress)

    return [results[i] for i in range(len(items))]


def run_rolling_window(
    items: Sequence[T],
    work_fn: Callable[[T], R],
    max_concurrent: int = 4,
    progress_callback: Optional[Callable[[RollingWindowProgress], None]] = None,
) -> List[R]:
    """Synchronous entry point: run blocking ``work_fn`` on worker threads through the window."""

    async def process(item: T) -> R:
        return await asyncio.to_thread(work_fn, item)

    return asyncio.run(process_with_rolling_window(items, process, max_concurrent, progress_callback))
