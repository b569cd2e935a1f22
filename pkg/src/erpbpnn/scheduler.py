"""Return-progress task selection.

Each task keeps a history of average episodic returns, one entry per
iteration in which it was rolled out (trained or evaluated). A task's
progress signal (ERP) is the least-squares slope of its last `window`
returns against consecutive iteration indices; the task with the steepest
recent progress is selected for the next training iteration. Histories are
bootstrapped by an initial per-task jumpstart block of `k_init > window`
iterations, after which every task records a return every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import lsq_slope

__all__ = [
    "InsufficientHistoryError",
    "ReturnHistory",
    "SchedulerState",
    "record_return",
    "erp",
    "erp_all",
    "select_task",
    "record_selection",
    "selection_frequency",
]


class InsufficientHistoryError(RuntimeError):
    """Raised when a slope is requested before a task has `window` returns."""


@dataclass
class ReturnHistory:
    """Windowed series of one task's average episodic returns."""

    task: int
    iterations: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def append(self, k: int, value: float) -> None:
        if self.iterations and k <= self.iterations[-1]:
            raise RuntimeError(
                f"return for task {self.task} at iteration {k} recorded twice "
                f"(last recorded: {self.iterations[-1]})"
            )
        self.iterations.append(int(k))
        self.values.append(float(value))

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class SchedulerState:
    """Histories, latest progress values, and the selection log."""

    n_tasks: int
    window: int = 5
    k_init: int = 20
    histories: list[ReturnHistory] = field(default_factory=list)
    erp_values: dict[int, float] = field(default_factory=dict)
    selection_log: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.k_init <= self.window:
            raise ValueError("k_init must exceed the slope window")
        if not self.histories:
            self.histories = [ReturnHistory(m) for m in range(self.n_tasks)]


def record_return(state: SchedulerState, task: int, k: int, value: float) -> None:
    """Append a task's average episodic return for iteration k."""
    state.histories[task].append(k, value)


def erp(state: SchedulerState, task: int) -> float:
    """Slope of the task's last `window` returns against iteration index."""
    hist = state.histories[task]
    w = state.window
    if len(hist) < w:
        raise InsufficientHistoryError(
            f"task {task} not bootstrapped: {len(hist)} returns, window {w}"
        )
    last_k = hist.iterations[-1]
    xs = np.arange(last_k - w + 1, last_k + 1, dtype=np.float64)
    ys = np.asarray(hist.values[-w:], dtype=np.float64)
    return lsq_slope(xs, ys)


def erp_all(state: SchedulerState) -> list[float]:
    values = [erp(state, m) for m in range(state.n_tasks)]
    for m, v in enumerate(values):
        state.erp_values[m] = v
    return values


def select_task(state: SchedulerState, k: int) -> int:
    """Pick the task with maximal progress; ties go to the lowest index."""
    values = erp_all(state)
    chosen = int(np.argmax(values))
    state.selection_log.append((int(k), chosen))
    return chosen


def record_selection(state: SchedulerState, k: int, task: int) -> None:
    """Log a selection made by some other rule (e.g. uniform baselines)."""
    state.selection_log.append((int(k), int(task)))


def selection_frequency(state: SchedulerState, nu: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-task fraction of the last `nu` selections, per log position.

    Returns (iterations, freqs) where row i of `freqs` holds each task's
    share of the `nu` selections ending at log position i; `iterations` gives
    the corresponding iteration numbers. Rows sum to 1.
    """
    if not state.selection_log:
        raise ValueError("selection log is empty")
    if nu < 1:
        raise ValueError("window must be positive")
    chosen = np.array([task for _, task in state.selection_log])
    ks = np.array([k for k, _ in state.selection_log])
    n = len(chosen)
    if n < nu:
        return np.empty(0, dtype=np.int64), np.empty((0, state.n_tasks))
    counts = np.zeros((n - nu + 1, state.n_tasks))
    for m in range(state.n_tasks):
        hits = (chosen == m).astype(np.float64)
        cum = np.concatenate([[0.0], np.cumsum(hits)])
        counts[:, m] = cum[nu:] - cum[:-nu]
    return ks[nu - 1:], counts / nu
