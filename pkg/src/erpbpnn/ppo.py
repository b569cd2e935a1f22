"""PPO with clipped surrogate and clipped value loss on the active module.

The actor and critic are two separate multi-module networks; an update
touches exactly one task's modules (and the laterals feeding them) in each.
Policies are diagonal Gaussians whose mean comes from the actor's task head
and whose log standard deviation is a learned per-task vector independent of
the state trained alongside the actor.

Gradients are written out by hand (the networks use manual backprop): the
loss functions here return both per-sample values and the exact derivative of
the selected min/max branch, which is what chains into the network backward
pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bpnn import (
    BpnnNet,
    GradientSet,
    backward,
    forward_batch,
    grad_items,
    param_items,
)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

__all__ = [
    "PpoConfig",
    "RunningMeanStd",
    "RewardNormalizer",
    "RolloutBuffer",
    "AdamState",
    "UpdateStats",
    "TrainingDiverged",
    "collect_rollout",
    "compute_gae",
    "gaussian_log_prob",
    "gaussian_entropy",
    "clipped_surrogate",
    "clipped_value_loss",
    "adam_step",
    "clip_global_norm",
    "ppo_update",
]


class TrainingDiverged(RuntimeError):
    """Raised when an update produces a non-finite loss."""


@dataclass
class PpoConfig:
    """PPO hyperparameters.

    Defaults are the standard continuous-control settings; the method itself
    does not pin them, so every field is overridable from the run config.
    """

    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coef: float = 0.5     # c1
    entropy_coef: float = 0.0   # c2
    learning_rate: float = 3e-4
    lr_decay: bool = False
    epochs: int = 10
    minibatch_size: int = 64
    max_grad_norm: float = 0.5
    log_std_init: float = 0.0
    advantage_norm: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reward_clip: float = 10.0


class RunningMeanStd:
    """Streaming mean/variance over batches (parallel-update form)."""

    def __init__(self, epsilon: float = 1e-4):
        self.mean = 0.0
        self.var = 1.0
        self.count = epsilon

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        batch_mean = float(x.mean())
        batch_var = float(x.var())
        batch_count = x.size
        delta = batch_mean - self.mean
        total = self.count + batch_count
        m2 = (
            self.var * self.count
            + batch_var * batch_count
            + delta * delta * self.count * batch_count / total
        )
        self.mean += delta * batch_count / total
        self.var = m2 / total
        self.count = total


class RewardNormalizer:
    """Scale-only reward normalization with clipping.

    Tracks a per-instance discounted return accumulator and the running
    variance of that accumulator; rewards are divided by its standard
    deviation (no mean subtraction) and clipped to [-clip, clip]. Raw rewards
    are never modified; callers keep them separately for metrics.
    """

    def __init__(self, gamma: float, n_envs: int, clip: float = 10.0, epsilon: float = 1e-8):
        self.gamma = float(gamma)
        self.clip = float(clip)
        self.epsilon = float(epsilon)
        self.returns = np.zeros(n_envs)
        self.rms = RunningMeanStd()

    def normalize(self, rewards: np.ndarray, dones: np.ndarray) -> np.ndarray:
        rewards = np.asarray(rewards, dtype=np.float64)
        self.returns = self.returns * self.gamma + rewards
        self.rms.update(self.returns)
        out = np.clip(
            rewards / math.sqrt(self.rms.var + self.epsilon), -self.clip, self.clip
        )
        self.returns[np.asarray(dones, dtype=bool)] = 0.0
        return out


@dataclass
class RolloutBuffer:
    """One task's batch of complete episodes, episode-major.

    Arrays are shaped (episodes, steps, ...). `fingertips` has one extra
    leading step per episode (the post-reset position) for path metrics; it
    is None for environments without a fingertip.
    """

    task: int
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    raw_rewards: np.ndarray
    norm_rewards: np.ndarray | None
    values: np.ndarray | None
    dones: np.ndarray
    fingertips: np.ndarray | None = None
    targets: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @property
    def n_episodes(self) -> int:
        return self.obs.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    @property
    def train_rewards(self) -> np.ndarray:
        return self.norm_rewards if self.norm_rewards is not None else self.raw_rewards

    def episode_returns(self, raw: bool = True) -> np.ndarray:
        rewards = self.raw_rewards if raw else self.train_rewards
        return rewards.sum(axis=1)

    def discounted_episode_returns(self, gamma: float, raw: bool = True) -> np.ndarray:
        rewards = self.raw_rewards if raw else self.train_rewards
        discounts = gamma ** np.arange(rewards.shape[1])
        return rewards @ discounts


def clamp_log_std(log_std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamped log-std and the 0/1 mask of entries inside the clamp range."""
    clamped = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    inside = ((log_std > LOG_STD_MIN) & (log_std < LOG_STD_MAX)).astype(np.float64)
    return clamped, inside


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over action dimensions."""
    diff = actions - mean
    inv_var = np.exp(-2.0 * log_std)
    d = mean.shape[-1]
    return -0.5 * np.sum(diff * diff * inv_var, axis=-1) - np.sum(log_std) - 0.5 * d * math.log(2.0 * math.pi)


def gaussian_entropy(log_std: np.ndarray) -> float:
    d = log_std.shape[0]
    return float(np.sum(log_std) + 0.5 * d * (1.0 + math.log(2.0 * math.pi)))


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample clipped surrogate min(r*A, clip(r)*A) and its d/d(logp).

    The derivative follows the selected branch: a clipped-and-smaller branch
    contributes zero gradient, otherwise d/d(logp) = A * r.
    """
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
    per_sample = np.minimum(unclipped, clipped)
    d_logp = np.where(unclipped <= clipped, adv * ratio, 0.0)
    return per_sample, d_logp


def clipped_value_loss(values: np.ndarray, values_old: np.ndarray, returns: np.ndarray,
                       clip_eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample clipped value loss max((v-R)^2, (v_clip-R)^2) and d/dv.

    v_clip anchors the new value within +-clip_eps of the old one. When the
    clipped branch is the larger one the clip is saturated, so its gradient
    w.r.t. v is zero.
    """
    unclipped = (values - returns) ** 2
    v_clip = values_old + np.clip(values - values_old, -clip_eps, clip_eps)
    clipped = (v_clip - returns) ** 2
    per_sample = np.maximum(unclipped, clipped)
    d_v = np.where(unclipped >= clipped, 2.0 * (values - returns), 0.0)
    return per_sample, d_v


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and return targets over (episodes, steps) arrays.

    Episodes are rows, so the recursion truncates at row ends with a zero
    bootstrap value past the terminal step. Returns (advantages, returns)
    where returns[t] = advantages[t] + values[t].
    """
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must have matching shapes")
    n_episodes, n_steps = rewards.shape
    adv = np.zeros_like(rewards)
    carry = np.zeros(n_episodes)
    for t in range(n_steps - 1, -1, -1):
        v_next = values[:, t + 1] if t + 1 < n_steps else 0.0
        delta = rewards[:, t] + gamma * v_next - values[:, t]
        carry = delta + gamma * lam * carry
        adv[:, t] = carry
    return adv, adv + values


def add_gae(buffer: RolloutBuffer, gamma: float, lam: float) -> RolloutBuffer:
    """Fill a buffer's advantages/returns from its training rewards."""
    if buffer.values is None:
        raise ValueError("buffer has no value estimates; collect with a critic")
    buffer.advantages, buffer.returns = compute_gae(
        buffer.train_rewards, buffer.values, gamma, lam
    )
    return buffer


def collect_rollout(
    venv,
    actor: BpnnNet,
    critic: BpnnNet | None,
    log_std: np.ndarray,
    task: int,
    kappa: int,
    action_rng: np.random.Generator,
    normalizer: RewardNormalizer | None = None,
    sample: bool = True,
) -> RolloutBuffer:
    """Run `kappa` complete episodes in every parallel instance of `venv`.

    Actions come from the Gaussian head (the policy mean when sample=False);
    log-probs are recorded under the sampling parameters. Raw rewards are
    kept as returned by the environment; normalized rewards are stored
    alongside when a normalizer is given (its running statistics update).
    """
    n_envs = venv.n_envs
    n_steps = venv.episode_length
    act_dim = venv.action_dim
    n_eps = kappa * n_envs
    has_fingertips = hasattr(venv, "fingertips")

    obs = np.zeros((n_eps, n_steps, venv.obs_dim))
    actions = np.zeros((n_eps, n_steps, act_dim))
    log_probs = np.zeros((n_eps, n_steps))
    raw_rewards = np.zeros((n_eps, n_steps))
    norm_rewards = np.zeros((n_eps, n_steps)) if normalizer is not None else None
    values = np.zeros((n_eps, n_steps)) if critic is not None else None
    dones = np.zeros((n_eps, n_steps), dtype=bool)
    fingertips = np.zeros((n_eps, n_steps + 1, 2)) if has_fingertips else None
    targets = np.zeros((n_eps, 2)) if has_fingertips else None

    ls, _ = clamp_log_std(log_std)
    std = np.exp(ls)
    for k in range(kappa):
        rows = slice(k * n_envs, (k + 1) * n_envs)
        obs_t = venv.reset_all()
        if has_fingertips:
            fingertips[rows, 0] = venv.fingertips()
            targets[rows] = venv.targets
        for t in range(n_steps):
            outs, _trace = forward_batch(actor, obs_t, task)
            mean = outs[task]
            if sample:
                act = mean + std * action_rng.standard_normal(mean.shape)
            else:
                act = mean.copy()
            if critic is not None:
                v_outs, _ = forward_batch(critic, obs_t, task)
                values[rows, t] = v_outs[task][:, 0]
            obs[rows, t] = obs_t
            actions[rows, t] = act
            log_probs[rows, t] = gaussian_log_prob(mean, ls, act)
            obs_t, r_raw, done_t = venv.step(act)
            raw_rewards[rows, t] = r_raw
            dones[rows, t] = done_t
            if normalizer is not None:
                norm_rewards[rows, t] = normalizer.normalize(r_raw, done_t)
            if has_fingertips:
                fingertips[rows, t + 1] = venv.fingertips()
    return RolloutBuffer(
        task=task,
        obs=obs,
        actions=actions,
        log_probs=log_probs,
        raw_rewards=raw_rewards,
        norm_rewards=norm_rewards,
        values=values,
        dones=dones,
        fingertips=fingertips,
        targets=targets,
    )


@dataclass
class AdamState:
    """First/second moment estimates over one flat buffer.

    Moments live in a single vector laid out by parameter name so one update
    touches two arrays instead of dozens of tiny ones. When the parameter set
    changes (lateral weights join after the jumpstart phase), the layout is
    rebuilt and existing moments carry over by name; fresh names start at
    zero, the step counter is shared.
    """

    t: int = 0
    layout: list = field(default_factory=list)   # [(name, size)] in order
    offsets: dict = field(default_factory=dict)  # name -> (start, size)
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _ensure_layout(state: AdamState, items: list) -> None:
    key = [(name, p.size) for name, p in items]
    if state.layout == key:
        return
    total = sum(size for _, size in key)
    new_m = np.zeros(total)
    new_v = np.zeros(total)
    offsets = {}
    start = 0
    for name, size in key:
        offsets[name] = (start, size)
        if name in state.offsets and state.offsets[name][1] == size:
            old_start, _ = state.offsets[name]
            new_m[start:start + size] = state.m[old_start:old_start + size]
            new_v[start:start + size] = state.v[old_start:old_start + size]
        start += size
    state.layout = key
    state.offsets = offsets
    state.m = new_m
    state.v = new_v


def _adam_flat(items: list, flat_grad: np.ndarray, state: AdamState, lr: float,
               beta1: float, beta2: float, eps: float) -> None:
    """Adam update of `items` from an already-flattened gradient (consumed)."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    m, v = state.m, state.v
    m *= beta1
    m += (1.0 - beta1) * flat_grad
    v *= beta2
    flat_grad *= flat_grad
    v += (1.0 - beta2) * flat_grad
    step = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    for name, p in items:
        start, size = state.offsets[name]
        p -= step[start:start + size].reshape(p.shape)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update, in place, with bias correction."""
    items = list(params.items())
    _ensure_layout(state, items)
    flat_grad = np.concatenate([np.ravel(grads[name]) for name, _ in items])
    _adam_flat(items, flat_grad, state, lr, beta1, beta2, eps)


def _clip_flat(flat: np.ndarray, max_norm: float) -> float:
    norm = math.sqrt(float(flat @ flat))
    if norm > max_norm > 0.0:
        flat *= max_norm / norm
    return norm


def clip_global_norm(arrays, max_norm: float) -> float:
    """Scale arrays in place so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    arrays = list(arrays)
    for a in arrays:
        total += float(np.sum(a * a))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    grad_norm: float
    lr: float
    n_minibatches: int


def _check_freeze_preconditions(net: BpnnNet, task: int, name: str) -> None:
    if net.modules[task].frozen:
        raise ValueError(f"{name}: active module {task} is frozen")
    for mod in net.modules:
        if mod.index != task and not mod.frozen:
            raise ValueError(f"{name}: non-active module {mod.index} must be frozen")


def ppo_update(
    actor: BpnnNet,
    critic: BpnnNet,
    log_std: np.ndarray,
    task: int,
    buffer: RolloutBuffer,
    cfg: PpoConfig,
    actor_state: AdamState,
    critic_state: AdamState,
    perm_rng: np.random.Generator,
    lr: float | None = None,
    train_laterals: bool = True,
    on_optimizer_step=None,
) -> UpdateStats:
    """Optimize the active task's modules on one rollout.

    Runs `cfg.epochs` passes of shuffled minibatches. The maximized objective
    is clipped surrogate - c1 * clipped value loss + c2 * entropy; advantages
    are normalized once over the whole update batch. Gradients of each
    network (the actor set includes the log-std vector) are clipped to a
    global norm before Adam. Only the active module and its incoming laterals
    change; `train_laterals=False` additionally leaves the laterals out.
    """
    _check_freeze_preconditions(actor, task, "actor")
    _check_freeze_preconditions(critic, task, "critic")
    if buffer.advantages is None or buffer.returns is None:
        raise ValueError("buffer has no advantages; call add_gae first")
    lr = cfg.learning_rate if lr is None else lr
    include_lat = train_laterals and actor.lateral

    n = buffer.n_transitions
    obs = np.ascontiguousarray(buffer.obs.reshape(n, -1))
    actions = buffer.actions.reshape(n, -1)
    logp_old = buffer.log_probs.reshape(n)
    values_old = buffer.values.reshape(n)
    returns = buffer.returns.reshape(n)
    adv = buffer.advantages.reshape(n)
    if cfg.advantage_norm:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    actor_items = param_items(actor, task, include_lat) + [("log_std", log_std)]
    critic_items = param_items(critic, task, train_laterals and critic.lateral)
    _ensure_layout(actor_state, actor_items)
    _ensure_layout(critic_state, critic_items)
    include_lat_c = train_laterals and critic.lateral

    mb = min(cfg.minibatch_size, n)
    pg_losses, vf_losses, entropies, norms = [], [], [], []
    for epoch in range(cfg.epochs):
        order = perm_rng.permutation(n)
        for start in range(0, n, mb):
            sel = order[start:start + mb]
            b = sel.size
            x = np.ascontiguousarray(obs[sel])
            ls, ls_mask = clamp_log_std(log_std)

            # Policy terms.
            outs, trace_a = forward_batch(actor, x, task)
            mean = outs[task]
            act_sel = actions[sel]
            logp = gaussian_log_prob(mean, ls, act_sel)
            ratio = np.exp(logp - logp_old[sel])
            surr, d_logp = clipped_surrogate(ratio, adv[sel], cfg.clip_eps)
            pg_loss = -float(surr.mean())

            # Value terms.
            v_outs, trace_c = forward_batch(critic, x, task)
            v = v_outs[task][:, 0]
            vf_per, d_v = clipped_value_loss(v, values_old[sel], returns[sel], cfg.clip_eps)
            vf_loss = float(vf_per.mean())

            entropy = gaussian_entropy(ls)
            total = pg_loss + cfg.value_coef * vf_loss - cfg.entropy_coef * entropy
            if not math.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss for task {task} at epoch {epoch}: "
                    f"policy={pg_loss!r} value={vf_loss!r}"
                )

            d_logp = -d_logp / b  # minimization, mean over minibatch
            inv_var = np.exp(-2.0 * ls)
            diff = act_sel - mean
            d_mean = d_logp[:, None] * (diff * inv_var)
            g_log_std = (d_logp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0)
            g_log_std -= cfg.entropy_coef  # d(-c2 * entropy)/d(log_std) = -c2
            g_log_std = g_log_std * ls_mask
            a_grads = backward(actor, trace_a, d_mean, task)
            d_v = cfg.value_coef * d_v / b
            c_grads = backward(critic, trace_c, d_v[:, None], task)

            a_flat = np.concatenate(
                [g.ravel() for _, g in grad_items(a_grads, include_lat)]
                + [g_log_std]
            )
            c_flat = np.concatenate(
                [g.ravel() for _, g in grad_items(c_grads, include_lat_c)]
            )
            a_norm = _clip_flat(a_flat, cfg.max_grad_norm)
            _clip_flat(c_flat, cfg.max_grad_norm)
            _adam_flat(actor_items, a_flat, actor_state, lr,
                       cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            _adam_flat(critic_items, c_flat, critic_state, lr,
                       cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            if on_optimizer_step is not None:
                on_optimizer_step()

            pg_losses.append(pg_loss)
            vf_losses.append(vf_loss)
            entropies.append(entropy)
            norms.append(a_norm)

    return UpdateStats(
        policy_loss=float(np.mean(pg_losses)),
        value_loss=float(np.mean(vf_losses)),
        entropy=float(np.mean(entropies)),
        grad_norm=float(np.mean(norms)),
        lr=lr,
        n_minibatches=len(pg_losses),
    )
