"""Kinematic planar reacher arms with padded observations.

Simulates N-link arms (N in {2, 3, 4}) under torque control with
semi-implicit Euler dynamics:

    vel' = vel + dt * (gain * action - damping * vel)
    ang' = ang + dt * vel'

with dt = 0.02, gain = 20, damping = 1. Actions are clipped to the torque
bound before integration. The per-step reward is

    r = -||fingertip - target||_2 - sum(a^2)

evaluated with the clipped action and the post-step fingertip position, so a
zero action with the fingertip resting on the target yields exactly 0.
Episodes run a fixed 50 steps.

Observations are zero-padded to a fixed 16-dim layout shared by all arms:

    [cos a_1..4 | sin a_1..4 | vel_1..4 | target_x target_y | dx dy]

where (dx, dy) = fingertip - target and every slot of an absent link is
exactly 0 (including the cosine slots).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DT = 0.02
GAIN = 20.0
DAMPING = 1.0
EPISODE_LENGTH = 50
MAX_LINKS = 4
OBS_DIM = 4 * MAX_LINKS  # cos/sin/vel blocks + target + fingertip offset
DEFAULT_REACH = 0.21
TARGET_RADIUS_FRACTION = 0.9
RESET_VELOCITY_BOUND = 0.005

__all__ = [
    "ArmSpec",
    "ReacherEnv",
    "VectorReacher",
    "fingertip_xy",
    "trace_record",
    "DT",
    "GAIN",
    "DAMPING",
    "EPISODE_LENGTH",
    "OBS_DIM",
    "DEFAULT_REACH",
]


@dataclass(frozen=True)
class ArmSpec:
    """Geometry and actuation bounds of one arm."""

    n_links: int
    link_lengths: tuple[float, ...]
    max_torque: float = 1.0

    def __post_init__(self):
        if self.n_links not in (2, 3, 4):
            raise ValueError(f"n_links must be 2, 3, or 4, got {self.n_links}")
        if len(self.link_lengths) != self.n_links:
            raise ValueError("link_lengths must have one entry per link")
        if any(length <= 0 for length in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if self.max_torque <= 0:
            raise ValueError("max_torque must be positive")

    @classmethod
    def equal_links(cls, n_links: int, total_reach: float = DEFAULT_REACH,
                    max_torque: float = 1.0) -> "ArmSpec":
        """Arm with `n_links` equal links summing to `total_reach`."""
        return cls(n_links, (total_reach / n_links,) * n_links, max_torque)

    @property
    def total_reach(self) -> float:
        return float(sum(self.link_lengths))


def fingertip_xy(link_lengths, angles) -> np.ndarray:
    """Forward kinematics: fingertip of a chain of relative joint angles."""
    lengths = np.asarray(link_lengths, dtype=np.float64)
    cum = np.cumsum(np.asarray(angles, dtype=np.float64))
    return np.array([lengths @ np.cos(cum), lengths @ np.sin(cum)])


def trace_record(task: int, episode: int, step: int, obs, action, reward: float,
                 fingertip, target) -> dict:
    """One JSON-lines record of an episode trace."""
    return {
        "task": int(task),
        "episode": int(episode),
        "step": int(step),
        "obs": [float(v) for v in obs],
        "action": [float(v) for v in action],
        "reward": float(reward),
        "fingertip": [float(v) for v in fingertip],
        "target": [float(v) for v in target],
    }


class VectorReacher:
    """A batch of identical, independently seeded reacher instances.

    Stepping is vectorized over the batch but equivalent to stepping each
    instance alone; per-instance RNG streams keep resets independent of batch
    composition and execution order.
    """

    def __init__(self, spec: ArmSpec, n_envs: int, rngs: list[np.random.Generator],
                 episode_length: int = EPISODE_LENGTH):
        if len(rngs) != n_envs:
            raise ValueError("need one RNG stream per environment instance")
        self.spec = spec
        self.n_envs = int(n_envs)
        self.episode_length = int(episode_length)
        self._rngs = rngs
        self._lengths = np.asarray(spec.link_lengths)
        n = spec.n_links
        self.angles = np.zeros((n_envs, n))
        self.velocities = np.zeros((n_envs, n))
        self.targets = np.zeros((n_envs, 2))
        self.step_counts = np.zeros(n_envs, dtype=np.int64)

    @property
    def action_dim(self) -> int:
        return self.spec.n_links

    @property
    def obs_dim(self) -> int:
        return OBS_DIM

    def fingertips(self) -> np.ndarray:
        # Row-local reduction keeps results bit-identical across batch sizes.
        cum = np.cumsum(self.angles, axis=1)
        x = (np.cos(cum) * self._lengths).sum(axis=1)
        y = (np.sin(cum) * self._lengths).sum(axis=1)
        return np.stack([x, y], axis=1)

    def _observe(self) -> np.ndarray:
        n = self.spec.n_links
        obs = np.zeros((self.n_envs, OBS_DIM))
        obs[:, 0:n] = np.cos(self.angles)
        obs[:, MAX_LINKS:MAX_LINKS + n] = np.sin(self.angles)
        obs[:, 2 * MAX_LINKS:2 * MAX_LINKS + n] = self.velocities
        obs[:, 12:14] = self.targets
        obs[:, 14:16] = self.fingertips() - self.targets
        return obs

    def reset_all(self) -> np.ndarray:
        """Start a fresh episode in every instance; returns the observations."""
        n = self.spec.n_links
        radius = TARGET_RADIUS_FRACTION * self.spec.total_reach
        for i, rng in enumerate(self._rngs):
            # Negating a draw from [-pi, pi) lands angles in (-pi, pi].
            self.angles[i] = -rng.uniform(-np.pi, np.pi, size=n)
            self.velocities[i] = rng.uniform(
                -RESET_VELOCITY_BOUND, RESET_VELOCITY_BOUND, size=n
            )
            r = radius * np.sqrt(rng.uniform())
            phi = rng.uniform(-np.pi, np.pi)
            self.targets[i] = (r * np.cos(phi), r * np.sin(phi))
        self.step_counts[:] = 0
        return self._observe()

    def step(self, actions) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance every instance one step; returns (obs, rewards, dones)."""
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, self.spec.n_links):
            raise ValueError(
                f"actions must be ({self.n_envs}, {self.spec.n_links}), got {actions.shape}"
            )
        a = np.clip(actions, -self.spec.max_torque, self.spec.max_torque)
        self.velocities += DT * (GAIN * a - DAMPING * self.velocities)
        self.angles += DT * self.velocities
        self.step_counts += 1
        dist = np.linalg.norm(self.fingertips() - self.targets, axis=1)
        rewards = -dist - np.sum(a * a, axis=1)
        dones = self.step_counts >= self.episode_length
        return self._observe(), rewards, dones

    def set_state(self, angles, velocities, targets, step_counts=None) -> None:
        """Overwrite the simulator state (diagnostics and replay)."""
        self.angles[...] = np.asarray(angles, dtype=np.float64)
        self.velocities[...] = np.asarray(velocities, dtype=np.float64)
        self.targets[...] = np.asarray(targets, dtype=np.float64)
        if step_counts is not None:
            self.step_counts[...] = step_counts


class ReacherEnv:
    """Single-instance view over the vectorized simulator."""

    def __init__(self, spec: ArmSpec, rng: np.random.Generator,
                 episode_length: int = EPISODE_LENGTH):
        self._v = VectorReacher(spec, 1, [rng], episode_length)

    @property
    def spec(self) -> ArmSpec:
        return self._v.spec

    @property
    def angles(self) -> np.ndarray:
        return self._v.angles[0]

    @property
    def velocities(self) -> np.ndarray:
        return self._v.velocities[0]

    @property
    def target(self) -> np.ndarray:
        return self._v.targets[0]

    @property
    def step_count(self) -> int:
        return int(self._v.step_counts[0])

    def reset(self) -> np.ndarray:
        return self._v.reset_all()[0]

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        obs, rewards, dones = self._v.step(np.asarray(action)[None, :])
        return obs[0], float(rewards[0]), bool(dones[0])

    def fingertip(self) -> np.ndarray:
        return self._v.fingertips()[0]

    def set_state(self, angles, velocities, target, step_count: int = 0) -> None:
        self._v.set_state(
            np.asarray(angles)[None, :], np.asarray(velocities)[None, :],
            np.asarray(target)[None, :], np.asarray([step_count]),
        )
