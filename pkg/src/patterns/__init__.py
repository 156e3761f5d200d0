"""Concurrency patterns."""

from .rolling_window import (
    RollingWindowError,
    RollingWindowProgress,
    process_with_rolling_window,
    run_rolling_window,
)

__all__ = [
    "RollingWindowError",
    "RollingWindowProgress",
    "process_with_rolling_window",
    "run_rolling_window",
]
