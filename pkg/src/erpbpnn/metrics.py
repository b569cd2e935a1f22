"""Evaluation metrics over completed episodes and best-policy tracking.

All metrics are computed from raw (unnormalized) rewards and recorded
fingertip trajectories; reward normalization is a training device and never
reaches reported numbers. Best-so-far tracking keeps, per task, the highest
mean episodic return seen (with the checkpoint that earned it) plus running
minima of the distance and path-deviation metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ppo import RolloutBuffer

__all__ = [
    "EvalRecord",
    "BestPolicyStore",
    "episodic_return",
    "distance_to_goal",
    "path_deviation",
    "update_best",
    "buffer_eval_record",
]


@dataclass
class EvalRecord:
    """Mean raw-reward metrics of one task at one iteration.

    The discounted and normalized return variants are carried for logging
    only; reported metrics and best-policy tracking use `mean_return`.
    """

    iteration: int
    task: int
    mean_return: float
    mean_distance: float
    mean_deviation: float
    mean_return_discounted: float = float("nan")
    mean_return_norm: float = float("nan")


def episodic_return(rewards: np.ndarray) -> float:
    """Mean over episodes of the per-episode sum of raw rewards.

    `rewards` is (episodes, steps).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    return float(rewards.sum(axis=1).mean())


def distance_to_goal(final_fingertips: np.ndarray, goals: np.ndarray) -> float:
    """Mean L2 distance between final fingertip positions and goals."""
    diff = np.asarray(final_fingertips, dtype=np.float64) - np.asarray(goals, dtype=np.float64)
    return float(np.linalg.norm(diff, axis=-1).mean())


def path_deviation(trajectory: np.ndarray, goal) -> float:
    """Fingertip polyline length minus the straight start-to-goal distance.

    `trajectory` is (steps+1, 2) starting at the initial fingertip position.
    A straight run onto the goal scores 0; a stationary arm away from the
    goal scores the negative straight-line distance.
    """
    xs = np.asarray(trajectory, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 2 or xs.shape[1] != 2:
        raise ValueError(f"trajectory must be (steps+1, 2) with >= 1 step, got {xs.shape}")
    seg = np.linalg.norm(np.diff(xs, axis=0), axis=1).sum()
    straight = np.linalg.norm(np.asarray(goal, dtype=np.float64) - xs[0])
    return float(seg - straight)


def buffer_eval_record(buffer: RolloutBuffer, iteration: int, gamma: float | None = None) -> EvalRecord:
    """Summarize a rollout buffer of complete episodes into an EvalRecord."""
    if buffer.fingertips is None or buffer.targets is None:
        raise ValueError("buffer has no fingertip trajectories")
    deviations = [
        path_deviation(buffer.fingertips[e], buffer.targets[e])
        for e in range(buffer.n_episodes)
    ]
    discounted = float("nan")
    if gamma is not None:
        discounted = float(buffer.discounted_episode_returns(gamma).mean())
    return EvalRecord(
        iteration=int(iteration),
        task=buffer.task,
        mean_return=episodic_return(buffer.raw_rewards),
        mean_distance=distance_to_goal(buffer.fingertips[:, -1], buffer.targets),
        mean_deviation=float(np.mean(deviations)),
        mean_return_discounted=discounted,
    )


@dataclass
class BestPolicyStore:
    """Per-task best-so-far metrics and the checkpoints that achieved them.

    The stored checkpoint changes only when a task's mean return strictly
    improves; best distance and best deviation are independent running
    minima, so the reported series are monotone.
    """

    n_tasks: int
    best_return: dict[int, float] = field(default_factory=dict)
    best_distance: dict[int, float] = field(default_factory=dict)
    best_deviation: dict[int, float] = field(default_factory=dict)
    checkpoints: dict[int, dict] = field(default_factory=dict)
    best_iteration: dict[int, int] = field(default_factory=dict)


def update_best(store: BestPolicyStore, record: EvalRecord, make_checkpoint=None) -> bool:
    """Fold one evaluation record into the store.

    Returns True when the task's mean return strictly improved, in which case
    `make_checkpoint()` (if given) is called to build the stored checkpoint.
    """
    task = record.task
    improved = task not in store.best_return or record.mean_return > store.best_return[task]
    if improved:
        store.best_return[task] = record.mean_return
        store.best_iteration[task] = record.iteration
        if make_checkpoint is not None:
            store.checkpoints[task] = make_checkpoint()
    if task not in store.best_distance or record.mean_distance < store.best_distance[task]:
        store.best_distance[task] = record.mean_distance
    if task not in store.best_deviation or record.mean_deviation < store.best_deviation[task]:
        store.best_deviation[task] = record.mean_deviation
    return improved
