"""End-to-end training driver, baselines, run artifacts, and reports.

A run proceeds in two phases. The jumpstart phase trains each task in index
order for `k_init` iterations with lateral connections held fixed, recording
that task's average episodic return each iteration. The main phase then
repeats until the episode budget is exhausted: compute every task's return
progress, pick one task (steepest progress, or uniformly at random for the
baselines), train it for one iteration with its module and incoming laterals
unfrozen, then roll out every other task under its frozen parameters so its
return history advances too.

One iteration moves P (*parallel envs*) x kappa (*episodes per env*)
episodes per task touched. Methods:

  erp-bpnn     progress-based selection, lateral connections trainable
  random-bpnn  uniform selection, same lateral architecture
  random-mlp   uniform selection, no lateral parameters at all

Artifacts written per run: metrics.csv (per-iteration, per-task metrics and
best-so-far values), scheduler.csv (progress values and the selection),
train_log.jsonl (one record per training iteration), checkpoints/ (best
policy per task and the final state), run_manifest.json (resolved config,
RNG stream registry, episode accounting). Two runs with the same config and
seed produce byte-identical CSV files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bpnn import (
    BpnnNet,
    init_params,
    net_from_doc,
    net_to_doc,
    set_trainable_module,
)
from .metrics import BestPolicyStore, buffer_eval_record, update_best
from .ppo import (
    AdamState,
    PpoConfig,
    RewardNormalizer,
    add_gae,
    collect_rollout,
    ppo_update,
)
from .reacher import OBS_DIM, ArmSpec, VectorReacher, trace_record
from .scheduler import (
    SchedulerState,
    erp_all,
    record_return,
    record_selection,
    select_task,
)

METHODS = ("erp-bpnn", "random-bpnn", "random-mlp")

__all__ = [
    "ConfigError",
    "RunConfig",
    "Trainer",
    "run_erp_bpnn",
    "run_random_bpnn",
    "run_random_mlp",
    "run_single",
    "uniform_task_choice",
    "load_checkpoint",
    "evaluate_checkpoint",
    "replay_checkpoint",
    "summarize_run",
    "selection_frequency_table",
    "DEFAULT_MILESTONES",
]

DEFAULT_MILESTONES = (60_000, 75_000, 80_000, 100_000)


class ConfigError(ValueError):
    """Invalid run configuration; `field` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass
class RunConfig:
    """Everything a run needs; defaults follow the declared experiment setup.

    PPO hyperparameters live in the nested `ppo` section. Fields the method
    itself leaves open (see the shipped example config) are ordinary tunables
    here.
    """

    method: str = "erp-bpnn"
    seeds: list[int] = field(default_factory=lambda: [0])
    task_links: list[int] = field(default_factory=lambda: [2, 3, 4])
    total_reach: float = 0.21
    max_torque: float = 1.0
    episode_length: int = 50
    n_envs: int = 8            # parallel environments per task (P)
    episodes_per_env: int = 2  # episodes collected per env per iteration (kappa)
    k_init: int = 20
    window: int = 5
    hidden_layers: int = 3
    hidden_size: int = 2
    budget_episodes: int = 100_000
    count_eval_episodes: bool = True
    scheduler_return_source: str = "normalized"  # or "raw"
    selection: str = "argmax"  # or "softmax" (experimental variant)
    softmax_temperature: float = 1.0
    deterministic_probes: bool = True
    freq_window: int = 35
    backend: str = "auto"
    out_root: str = "runs"
    ppo: PpoConfig = field(default_factory=PpoConfig)

    @property
    def n_tasks(self) -> int:
        return len(self.task_links)

    @property
    def episodes_per_rollout(self) -> int:
        return self.n_envs * self.episodes_per_env

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {', '.join(METHODS)}")
        if not self.seeds:
            raise ConfigError("seeds", "must list at least one seed")
        if not self.task_links:
            raise ConfigError("task_links", "must list at least one arm")
        for links in self.task_links:
            if links not in (2, 3, 4):
                raise ConfigError("task_links", f"arms must have 2, 3, or 4 links, got {links}")
        if self.total_reach <= 0:
            raise ConfigError("total_reach", "must be positive")
        if self.max_torque <= 0:
            raise ConfigError("max_torque", "must be positive")
        if self.episode_length < 1:
            raise ConfigError("episode_length", "must be at least 1")
        if self.n_envs < 1:
            raise ConfigError("n_envs", "must be at least 1")
        if self.episodes_per_env < 1:
            raise ConfigError("episodes_per_env", "must be at least 1")
        if self.window < 2:
            raise ConfigError("window", "slope needs at least 2 points")
        if self.k_init <= self.window:
            raise ConfigError("k_init", f"must exceed window ({self.window})")
        if self.hidden_layers < 1:
            raise ConfigError("hidden_layers", "must be at least 1")
        if self.hidden_size < 1:
            raise ConfigError("hidden_size", "must be at least 1")
        jumpstart = self.n_tasks * self.k_init * self.episodes_per_rollout
        if self.budget_episodes <= jumpstart:
            raise ConfigError(
                "budget_episodes",
                f"must exceed the jumpstart total {jumpstart} "
                f"(tasks * k_init * n_envs * episodes_per_env)",
            )
        if self.scheduler_return_source not in ("normalized", "raw"):
            raise ConfigError("scheduler_return_source", "must be 'normalized' or 'raw'")
        if self.selection not in ("argmax", "softmax"):
            raise ConfigError("selection", "must be 'argmax' or 'softmax'")
        if self.softmax_temperature <= 0:
            raise ConfigError("softmax_temperature", "must be positive")
        if self.freq_window < 1:
            raise ConfigError("freq_window", "must be at least 1")
        if self.backend not in ("auto", "compiled", "python"):
            raise ConfigError("backend", "must be 'auto', 'compiled', or 'python'")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        ppo_data = data.pop("ppo", {})
        known = {f.name for f in dataclasses.fields(cls)} - {"ppo"}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown config field")
        known_ppo = {f.name for f in dataclasses.fields(PpoConfig)}
        for key in ppo_data:
            if key not in known_ppo:
                raise ConfigError(f"ppo.{key}", "unknown config field")
        try:
            cfg = cls(**data, ppo=PpoConfig(**ppo_data))
        except TypeError as exc:
            raise ConfigError("(config)", str(exc)) from exc
        return cfg.validate()

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data)

    def resolved(self) -> dict:
        return dataclasses.asdict(self)

    def arm_specs(self) -> list[ArmSpec]:
        return [
            ArmSpec.equal_links(links, self.total_reach, self.max_torque)
            for links in self.task_links
        ]


def uniform_task_choice(rng: np.random.Generator, n_tasks: int) -> int:
    """Uniform draw used by the random-selection baselines."""
    return int(rng.integers(n_tasks))


METRICS_COLUMNS = [
    "iteration", "episodes_so_far", "episodes_train_so_far", "episodes_eval_so_far",
    "task", "selected", "return_raw", "return_norm", "return_discounted",
    "distance", "deviation", "best_return", "best_distance", "best_deviation",
    "det_return", "det_distance", "det_deviation",
]


class Trainer:
    """Runs one seeded training session for one method."""

    def __init__(self, config: RunConfig, seed: int, out_dir: Path | str | None,
                 on_optimizer_step=None, after_iteration=None):
        self.cfg = config.validate()
        self.seed = int(seed)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.on_optimizer_step = on_optimizer_step
        self.after_iteration = after_iteration

        cfg = self.cfg
        n_tasks = cfg.n_tasks
        self._root_seq = np.random.SeedSequence(self.seed)
        self._stream_registry: dict[str, tuple[int, ...]] = {}

        lateral = cfg.method != "random-mlp"
        self.specs = cfg.arm_specs()
        self.actor = BpnnNet(OBS_DIM, cfg.hidden_layers, cfg.hidden_size,
                             [s.n_links for s in self.specs], lateral=lateral,
                             backend_name=cfg.backend)
        self.critic = BpnnNet(OBS_DIM, cfg.hidden_layers, cfg.hidden_size,
                              [1] * n_tasks, lateral=lateral, backend_name=cfg.backend)
        init_params(self.actor, self._spawn_int("actor-init"), out_gain=0.01)
        init_params(self.critic, self._spawn_int("critic-init"), out_gain=1.0)
        self.log_std = [
            np.full(s.n_links, cfg.ppo.log_std_init, dtype=np.float64) for s in self.specs
        ]

        self.method_rng = self._spawn_rng("method")
        self.action_rngs = [self._spawn_rng(f"task{m}-actions") for m in range(n_tasks)]
        self.minibatch_rngs = [self._spawn_rng(f"task{m}-minibatch") for m in range(n_tasks)]
        self.envs = [
            VectorReacher(
                self.specs[m], cfg.n_envs,
                [self._spawn_rng(f"task{m}-env{p}") for p in range(cfg.n_envs)],
                cfg.episode_length,
            )
            for m in range(n_tasks)
        ]
        if cfg.deterministic_probes:
            self.probe_envs = [
                VectorReacher(
                    self.specs[m], cfg.n_envs,
                    [self._spawn_rng(f"task{m}-probe-env{p}") for p in range(cfg.n_envs)],
                    cfg.episode_length,
                )
                for m in range(n_tasks)
            ]
        else:
            self.probe_envs = None

        self.normalizers = [
            RewardNormalizer(cfg.ppo.gamma, cfg.n_envs, clip=cfg.ppo.reward_clip)
            for _ in range(n_tasks)
        ]
        self.actor_opt = [AdamState() for _ in range(n_tasks)]
        self.critic_opt = [AdamState() for _ in range(n_tasks)]
        self.sched = SchedulerState(n_tasks, window=cfg.window, k_init=cfg.k_init)
        self.best = BestPolicyStore(n_tasks)

        self.iteration = 0
        self.phase2_iterations = 0
        self.episodes_train = 0
        self.episodes_eval = 0
        self.episodes_probe = 0
        self.metrics_rows: list[dict] = []
        self.scheduler_rows: list[dict] = []
        self.train_log: list[dict] = []

    # -- RNG bookkeeping ---------------------------------------------------

    def _spawn_seq(self, name: str) -> np.random.SeedSequence:
        child = self._root_seq.spawn(1)[0]
        key = tuple(int(v) for v in child.spawn_key)
        if name in self._stream_registry or key in set(self._stream_registry.values()):
            raise RuntimeError(f"RNG stream {name!r} would reuse an existing stream")
        self._stream_registry[name] = key
        return child

    def _spawn_rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self._spawn_seq(name))

    def _spawn_int(self, name: str) -> int:
        return int(self._spawn_seq(name).generate_state(1, np.uint64)[0])

    # -- accounting ----------------------------------------------------------

    @property
    def counted_episodes(self) -> int:
        if self.cfg.count_eval_episodes:
            return self.episodes_train + self.episodes_eval
        return self.episodes_train

    def _iteration_cost(self) -> int:
        per_rollout = self.cfg.episodes_per_rollout
        if self.cfg.count_eval_episodes:
            return per_rollout * self.cfg.n_tasks
        return per_rollout

    def _learning_rate(self) -> float:
        base = self.cfg.ppo.learning_rate
        if not self.cfg.ppo.lr_decay:
            return base
        progress = min(1.0, self.counted_episodes / self.cfg.budget_episodes)
        return base * (1.0 - progress)

    # -- single-iteration pieces ----------------------------------------------

    def _scheduler_value(self, buf) -> float:
        raw = self.cfg.scheduler_return_source == "raw"
        return float(buf.episode_returns(raw=raw).mean())

    def _train_iteration(self, task: int, train_laterals: bool):
        cfg = self.cfg
        lr = self._learning_rate()  # progress measured before this iteration
        set_trainable_module(self.actor, task)
        set_trainable_module(self.critic, task)
        buf = collect_rollout(
            self.envs[task], self.actor, self.critic, self.log_std[task], task,
            cfg.episodes_per_env, self.action_rngs[task],
            normalizer=self.normalizers[task],
        )
        self.episodes_train += buf.n_episodes
        add_gae(buf, cfg.ppo.gamma, cfg.ppo.gae_lambda)
        callback = None
        if self.on_optimizer_step is not None:
            callback = lambda: self.on_optimizer_step(self, task)
        stats = ppo_update(
            self.actor, self.critic, self.log_std[task], task, buf, cfg.ppo,
            self.actor_opt[task], self.critic_opt[task], self.minibatch_rngs[task],
            lr=lr, train_laterals=train_laterals,
            on_optimizer_step=callback,
        )
        set_trainable_module(self.actor, None)
        set_trainable_module(self.critic, None)
        return buf, stats

    def _eval_rollout(self, task: int):
        buf = collect_rollout(
            self.envs[task], self.actor, None, self.log_std[task], task,
            self.cfg.episodes_per_env, self.action_rngs[task],
            normalizer=self.normalizers[task],
        )
        self.episodes_eval += buf.n_episodes
        return buf

    def _probe(self, task: int):
        buf = collect_rollout(
            self.probe_envs[task], self.actor, None, self.log_std[task], task,
            1, self.action_rngs[task], normalizer=None, sample=False,
        )
        self.episodes_probe += buf.n_episodes
        return buffer_eval_record(buf, self.iteration)

    def _checkpoint_doc(self) -> dict:
        return {
            "kind": "erpbpnn-checkpoint",
            "version": 1,
            "method": self.cfg.method,
            "seed": self.seed,
            "iteration": self.iteration,
            "episode_length": self.cfg.episode_length,
            "tasks": [
                {
                    "n_links": s.n_links,
                    "link_lengths": list(s.link_lengths),
                    "max_torque": s.max_torque,
                }
                for s in self.specs
            ],
            "log_std": [ls.tolist() for ls in self.log_std],
            "actor": net_to_doc(self.actor),
            "critic": net_to_doc(self.critic),
        }

    def _metrics_row(self, task: int, selected: bool, record, det_record=None) -> dict:
        return {
            "iteration": self.iteration,
            "episodes_so_far": self.counted_episodes,
            "episodes_train_so_far": self.episodes_train,
            "episodes_eval_so_far": self.episodes_eval,
            "task": task,
            "selected": int(selected),
            "return_raw": record.mean_return,
            "return_norm": record.mean_return_norm,
            "return_discounted": record.mean_return_discounted,
            "distance": record.mean_distance,
            "deviation": record.mean_deviation,
            "best_return": self.best.best_return[task],
            "best_distance": self.best.best_distance[task],
            "best_deviation": self.best.best_deviation[task],
            "det_return": "" if det_record is None else det_record.mean_return,
            "det_distance": "" if det_record is None else det_record.mean_distance,
            "det_deviation": "" if det_record is None else det_record.mean_deviation,
        }

    def _record_task_iteration(self, task: int, selected: bool, buf):
        """Record returns, best-policy tracking, and the metrics row."""
        record = buffer_eval_record(buf, self.iteration, gamma=self.cfg.ppo.gamma)
        record.mean_return_norm = (
            float(buf.episode_returns(raw=False).mean())
            if buf.norm_rewards is not None else float("nan")
        )
        record_return(self.sched, task, self.iteration, self._scheduler_value(buf))
        update_best(self.best, record, self._checkpoint_doc)
        det_record = self._probe(task) if self.probe_envs is not None else None
        self.metrics_rows.append(self._metrics_row(task, selected, record, det_record))
        return record

    def _choose_task(self) -> tuple[list[float], int]:
        erps = erp_all(self.sched)
        if self.cfg.method == "erp-bpnn":
            if self.cfg.selection == "argmax":
                chosen = select_task(self.sched, self.iteration)
            else:
                scaled = np.asarray(erps) / self.cfg.softmax_temperature
                probs = np.exp(scaled - scaled.max())
                probs /= probs.sum()
                chosen = int(self.method_rng.choice(self.cfg.n_tasks, p=probs))
                record_selection(self.sched, self.iteration, chosen)
        else:
            chosen = uniform_task_choice(self.method_rng, self.cfg.n_tasks)
            record_selection(self.sched, self.iteration, chosen)
        return erps, chosen

    # -- phases ---------------------------------------------------------------

    def run(self) -> dict:
        """Execute the full session and return a summary."""
        cfg = self.cfg
        for task in range(cfg.n_tasks):
            for _ in range(cfg.k_init):
                self.iteration += 1
                buf, stats = self._train_iteration(task, train_laterals=False)
                record = self._record_task_iteration(task, True, buf)
                self._log_training(task, stats, record)
                if self.after_iteration is not None:
                    self.after_iteration(self, task)

        while self.counted_episodes + self._iteration_cost() <= cfg.budget_episodes:
            self.iteration += 1
            self.phase2_iterations += 1
            erps, chosen = self._choose_task()
            self.scheduler_rows.append(
                {"iteration": self.iteration, "erps": list(erps), "selected": chosen}
            )
            buf, stats = self._train_iteration(chosen, train_laterals=True)
            records = {chosen: buf}
            for task in range(cfg.n_tasks):
                if task != chosen:
                    records[task] = self._eval_rollout(task)
            record = None
            for task in range(cfg.n_tasks):
                rec = self._record_task_iteration(task, task == chosen, records[task])
                if task == chosen:
                    record = rec
            self._log_training(chosen, stats, record)
            if self.after_iteration is not None:
                self.after_iteration(self, chosen)

        summary = self._finalize()
        return summary

    def _log_training(self, task: int, stats, record) -> None:
        self.train_log.append({
            "iteration": self.iteration,
            "task": task,
            "policy_loss": stats.policy_loss,
            "value_loss": stats.value_loss,
            "entropy": stats.entropy,
            "grad_norm": stats.grad_norm,
            "lr": stats.lr,
            "return_raw": record.mean_return,
            "return_norm": record.mean_return_norm,
        })

    def _finalize(self) -> dict:
        cfg = self.cfg
        best_returns = {m: self.best.best_return.get(m) for m in range(cfg.n_tasks)}
        summary = {
            "method": cfg.method,
            "seed": self.seed,
            "iterations": self.iteration,
            "phase2_iterations": self.phase2_iterations,
            "episodes_train": self.episodes_train,
            "episodes_eval": self.episodes_eval,
            "episodes_probe": self.episodes_probe,
            "episodes_counted": self.counted_episodes,
            "backend": self.actor._kernels.NAME,
            "best_return": best_returns,
            "best_distance": dict(self.best.best_distance),
            "best_deviation": dict(self.best.best_deviation),
            "out_dir": str(self.out_dir) if self.out_dir else None,
        }
        if self.out_dir is not None:
            self._write_artifacts(summary)
        return summary

    def _write_artifacts(self, summary: dict) -> None:
        out = self.out_dir
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
            writer.writeheader()
            for row in self.metrics_rows:
                writer.writerow(row)
        sched_cols = ["iteration"] + [
            f"erp_task{m}" for m in range(self.cfg.n_tasks)
        ] + ["selected_task"]
        with open(out / "scheduler.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(sched_cols)
            for row in self.scheduler_rows:
                writer.writerow([row["iteration"], *row["erps"], row["selected"]])
        with open(out / "train_log.jsonl", "w") as fh:
            for rec in self.train_log:
                fh.write(json.dumps(rec) + "\n")
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        for task, doc in self.best.checkpoints.items():
            with open(ckpt_dir / f"best_task{task}.json", "w") as fh:
                json.dump(doc, fh)
        with open(ckpt_dir / "final.json", "w") as fh:
            json.dump(self._checkpoint_doc(), fh)
        manifest = {
            "version": __version__,
            "config": self.cfg.resolved(),
            "seed": self.seed,
            "summary": {k: v for k, v in summary.items() if k != "out_dir"},
            "rng_streams": {name: list(key) for name, key in self._stream_registry.items()},
            "numpy": np.__version__,
        }
        with open(out / "run_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)


def run_erp_bpnn(config: RunConfig, seed: int, out_dir=None, **hooks) -> dict:
    config = dataclasses.replace(config, method="erp-bpnn")
    return Trainer(config, seed, out_dir, **hooks).run()


def run_random_bpnn(config: RunConfig, seed: int, out_dir=None, **hooks) -> dict:
    config = dataclasses.replace(config, method="random-bpnn")
    return Trainer(config, seed, out_dir, **hooks).run()


def run_random_mlp(config: RunConfig, seed: int, out_dir=None, **hooks) -> dict:
    config = dataclasses.replace(config, method="random-mlp")
    return Trainer(config, seed, out_dir, **hooks).run()


def run_single(config_data: dict, method: str, seed: int, out_dir) -> dict:
    """Picklable entry point for running one seeded session in a worker."""
    data = dict(config_data)
    data["method"] = method
    cfg = RunConfig.from_dict(data)
    return Trainer(cfg, seed, out_dir).run()


# -- checkpoint consumers -----------------------------------------------------


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "erpbpnn-checkpoint":
        raise ValueError(f"{path} is not a run checkpoint")
    return doc


def _checkpoint_envs(doc: dict, n_envs: int, seed: int):
    specs = [
        ArmSpec(t["n_links"], tuple(t["link_lengths"]), t["max_torque"])
        for t in doc["tasks"]
    ]
    root = np.random.SeedSequence(seed)
    envs = []
    for m, spec in enumerate(specs):
        seqs = root.spawn(n_envs)
        envs.append(
            VectorReacher(spec, n_envs, [np.random.default_rng(s) for s in seqs],
                          doc["episode_length"])
        )
    return specs, envs


def evaluate_checkpoint(doc: dict, episodes: int = 16, seed: int = 0,
                        stochastic: bool = False, backend: str | None = None) -> dict:
    """Metrics of a checkpoint's policy over fresh seeded episodes, per task."""
    actor = net_from_doc(doc["actor"], backend_name=backend)
    n_envs = min(episodes, 8)
    kappa = math.ceil(episodes / n_envs)
    specs, envs = _checkpoint_envs(doc, n_envs, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    per_task = {}
    for m in range(len(specs)):
        log_std = np.asarray(doc["log_std"][m], dtype=np.float64)
        buf = collect_rollout(envs[m], actor, None, log_std, m, kappa, rng,
                              normalizer=None, sample=stochastic)
        rec = buffer_eval_record(buf, doc.get("iteration", 0))
        per_task[m] = {
            "mean_return": rec.mean_return,
            "mean_distance": rec.mean_distance,
            "mean_deviation": rec.mean_deviation,
            "episodes": buf.n_episodes,
        }
    overall = {
        "mean_return": float(np.mean([v["mean_return"] for v in per_task.values()])),
        "mean_distance": float(np.mean([v["mean_distance"] for v in per_task.values()])),
        "mean_deviation": float(np.mean([v["mean_deviation"] for v in per_task.values()])),
    }
    return {"per_task": {str(k): v for k, v in per_task.items()}, "overall": overall}


def replay_checkpoint(doc: dict, out_path, episodes: int = 1, seed: int = 0,
                      stochastic: bool = False, backend: str | None = None) -> int:
    """Write JSON-lines episode traces for every task; returns record count."""
    actor = net_from_doc(doc["actor"], backend_name=backend)
    specs, envs = _checkpoint_envs(doc, 1, seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    n_written = 0
    with open(out_path, "w") as fh:
        for m in range(len(specs)):
            log_std = np.asarray(doc["log_std"][m], dtype=np.float64)
            buf = collect_rollout(envs[m], actor, None, log_std, m, episodes, rng,
                                  normalizer=None, sample=stochastic)
            for e in range(buf.n_episodes):
                for t in range(buf.obs.shape[1]):
                    rec = trace_record(
                        m, e, t, buf.obs[e, t], buf.actions[e, t],
                        buf.raw_rewards[e, t], buf.fingertips[e, t + 1],
                        buf.targets[e],
                    )
                    fh.write(json.dumps(rec) + "\n")
                    n_written += 1
    return n_written


# -- reports ------------------------------------------------------------------


def _read_metrics(run_dir: Path) -> list[dict]:
    with open(Path(run_dir) / "metrics.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def _milestone_values(rows: list[dict], milestone: int) -> dict | None:
    """Mean-over-tasks best-so-far values at the last iteration within budget."""
    eligible = [r for r in rows if int(r["episodes_so_far"]) <= milestone]
    if not eligible:
        return None
    last_iter = max(int(r["iteration"]) for r in eligible)
    at = [r for r in eligible if int(r["iteration"]) == last_iter]
    return {
        "iteration": last_iter,
        "episodes": max(int(r["episodes_so_far"]) for r in at),
        "best_return": float(np.mean([float(r["best_return"]) for r in at])),
        "best_distance": float(np.mean([float(r["best_distance"]) for r in at])),
        "best_deviation": float(np.mean([float(r["best_deviation"]) for r in at])),
    }


def summarize_run(run_dir, milestones=None) -> dict:
    """Milestone summary of one run directory (or of seed_* children).

    With several seed directories the per-seed milestone values are
    aggregated as mean and standard deviation.
    """
    run_dir = Path(run_dir)
    seed_dirs = sorted(run_dir.glob("seed_*"))
    if not seed_dirs:
        seed_dirs = [run_dir]
    per_seed = []
    for d in seed_dirs:
        rows = _read_metrics(d)
        max_eps = max(int(r["episodes_so_far"]) for r in rows)
        per_seed.append((d.name, rows, max_eps))
    budget = min(eps for _, _, eps in per_seed)
    if milestones is None:
        milestones = [m for m in DEFAULT_MILESTONES if m <= budget] or [budget]
    table = []
    for milestone in milestones:
        seed_vals = []
        for name, rows, _ in per_seed:
            vals = _milestone_values(rows, milestone)
            if vals is not None:
                seed_vals.append((name, vals))
        if not seed_vals:
            continue
        entry = {"episodes": milestone, "n_seeds": len(seed_vals)}
        for key in ("best_return", "best_distance", "best_deviation"):
            data = [v[key] for _, v in seed_vals]
            entry[key] = {"mean": float(np.mean(data)), "std": float(np.std(data))}
        entry["per_seed"] = {name: v for name, v in seed_vals}
        table.append(entry)
    return {"run_dir": str(run_dir), "milestones": table}


def selection_frequency_table(run_dir, nu: int = 35) -> tuple[list[str], list[list]]:
    """Sliding-window selection frequencies from a run's scheduler.csv."""
    run_dir = Path(run_dir)
    with open(run_dir / "scheduler.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{run_dir}/scheduler.csv has no selections")
    n_tasks = sum(1 for c in rows[0] if c.startswith("erp_task"))
    chosen = np.array([int(r["selected_task"]) for r in rows])
    iters = np.array([int(r["iteration"]) for r in rows])
    header = ["iteration"] + [f"freq_task{m}" for m in range(n_tasks)]
    out_rows = []
    if len(chosen) >= nu:
        for i in range(nu - 1, len(chosen)):
            window = chosen[i - nu + 1:i + 1]
            freqs = [float(np.mean(window == m)) for m in range(n_tasks)]
            out_rows.append([int(iters[i])] + freqs)
    return header, out_rows
