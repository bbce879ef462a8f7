"""Training loop orchestration, evaluation, and run persistence.

One run executes ``total_steps`` critic iterations. Every ``k_pi``-th
iteration takes an actor step (the differentiable inner update, committed as
the new policy) followed by Polyak target updates; every ``k_pi * k_alpha``-th
iteration additionally scores that step with the outer criteria and updates
alpha -- but only under the dynamic schedule. Fixed and linear schedules
perform zero outer computations.

A run directory contains ``config.json`` (flat field/value map),
``metrics.csv`` (one row per logging interval), ``artifact.bin`` (pickled
RunArtifact), and ``curves/*.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import OfflineDataset, TransitionBatch, make_dataset, sample_batch
from .envs import EnvSpec, ScoreScale, compute_score_scale, env_reset, env_step, make_env
from .errors import TrainingDiverged
from .meta import (AlphaSchedule, AlphaState, LossMask, alpha_meta_step,
                   alpha_schedule_value, ema_update, outer_losses)
from .nets import MlpSpec, mlp_forward
from .params import ParamVector, soft_update
from .td3bc import (ActorState, CriticPair, critic_update, inner_gradient_decomposed,
                    inner_update, make_actor, make_critics, soft_update_targets)

METRIC_COLUMNS = ("global_step", "alpha", "l1", "l2", "l3", "q_bar", "q_abs_bar",
                  "bc_loss", "td_loss", "c_inf_sq", "delta_l_inf_bc",
                  "normalized_score", "wall_ms")


@dataclass
class RunConfig:
    """Flat description of one training run; every field maps 1:1 to JSON."""

    env_id: str = "pointmass1d"
    dataset_source: str = "medium"
    dataset_n: int = 100_000
    dataset_seed: int = 0
    total_steps: int = 200_000
    batch_size: int = 256
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    k_pi: int = 2
    k_alpha: int = 10
    critic_lr: float = 3e-4
    actor_lr: float = 3e-4
    alpha_lr: float = 2e-3
    alpha_init: float = 2.5
    beta_ema: float = 0.995
    alpha_schedule: str = "dynamic"  # dynamic | fixed | linear
    alpha_fixed: float = 2.5
    alpha_linear_end: float = 2.5
    use_l2: bool = True
    use_l3: bool = True
    robust_critic: bool = True
    hidden_width: int = 256
    alpha_clamp_min: float = 1e-4
    alpha_clamp_max: float = 1e3
    eval_every: int = 5000
    eval_episodes: int = 10
    log_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.k_pi < 1 or self.k_alpha < 1:
            raise ValueError("k_pi and k_alpha must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.eval_every % self.log_every != 0:
            raise ValueError("eval_every must be a multiple of log_every")
        if self.alpha_schedule not in ("dynamic", "fixed", "linear"):
            raise ValueError(f"unknown alpha schedule {self.alpha_schedule!r}")

    def schedule(self) -> AlphaSchedule:
        if self.alpha_schedule == "fixed":
            return AlphaSchedule("fixed", fixed_value=self.alpha_fixed)
        if self.alpha_schedule == "linear":
            return AlphaSchedule("linear", start=self.alpha_init,
                                 end=self.alpha_linear_end, total_steps=self.total_steps)
        return AlphaSchedule("dynamic")

    def loss_mask(self) -> LossMask:
        return LossMask(use_l2=self.use_l2, use_l3=self.use_l3)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        return RunConfig(**json.loads(text))


@dataclass
class MetricRow:
    global_step: int
    alpha: float
    l1: float
    l2: float
    l3: float
    q_bar: float
    q_abs_bar: float
    bc_loss: float
    td_loss: float
    c_inf_sq: float
    delta_l_inf_bc: float
    normalized_score: float | None
    wall_ms: float


@dataclass
class RunArtifact:
    """Everything a finished run leaves behind."""

    config: RunConfig
    rows: list[MetricRow]
    actor_spec: MlpSpec
    actor_params: ParamVector
    critic_spec: MlpSpec
    q1_params: ParamVector
    q2_params: ParamVector
    state_mean: np.ndarray
    state_std: np.ndarray
    score_scale: ScoreScale
    summary: dict

    def final_score(self) -> float:
        scores = [r.normalized_score for r in self.rows if r.normalized_score is not None]
        if not scores:
            raise ValueError("run recorded no evaluations")
        return scores[-1]

    def alpha_trace(self) -> np.ndarray:
        return np.array([r.alpha for r in self.rows])


def actor_policy(spec: MlpSpec, params: ParamVector, state_mean: np.ndarray,
                 state_std: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap trained weights as a greedy raw-observation policy."""

    def policy(s: np.ndarray) -> np.ndarray:
        x = ((s - state_mean) / state_std)[None, :]
        return mlp_forward(spec, params, x)[0][0]

    return policy


def evaluate_policy(policy: Callable[[np.ndarray], np.ndarray], env: EnvSpec,
                    scale: ScoreScale, episodes: int, seed) -> float:
    """Normalized score of a deterministic policy over fresh episodes.

    ``seed`` may be an int or an existing Generator (consumed sequentially).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    returns = []
    for _ in range(episodes):
        s = env_reset(env, rng)
        total = 0.0
        for _ in range(env.horizon):
            s, r, done = env_step(env, s, policy(s))
            total += r
            if done:
                break
        returns.append(total)
    return scale.normalize(float(np.mean(returns)))


class _Welford:
    """Streaming mean/variance accumulator."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        return self.m2 / self.n if self.n else 0.0


def run_training(config: RunConfig, dataset: OfflineDataset | None = None) -> RunArtifact:
    """Execute one full run and return its artifact (not yet persisted)."""
    env = make_env(config.env_id)
    if dataset is None:
        dataset = make_dataset(env, config.dataset_source, config.dataset_n,
                               config.dataset_seed)
    scale = compute_score_scale(env, config.dataset_seed)

    ss = np.random.SeedSequence(config.seed)
    ss_init, ss_batch, ss_noise, ss_eval = ss.spawn(4)
    rng_init = np.random.default_rng(ss_init)
    rng_batch = np.random.default_rng(ss_batch)
    rng_noise = np.random.default_rng(ss_noise)
    rng_eval = np.random.default_rng(ss_eval)

    actor = make_actor(env.state_dim, env.action_dim, env.max_action, rng_init,
                       width=config.hidden_width)
    critics = make_critics(env.state_dim, env.action_dim, rng_init,
                           width=config.hidden_width, robust=config.robust_critic)

    total_alpha_updates = config.total_steps // (config.k_pi * config.k_alpha)
    lr_decay = 0.1 ** (1.0 / total_alpha_updates) if total_alpha_updates >= 1 else 1.0
    alpha_state = AlphaState(
        alpha=config.alpha_init, lr=config.alpha_lr, lr_decay_per_update=lr_decay,
        beta_ema=config.beta_ema,
        clamp=(config.alpha_clamp_min, config.alpha_clamp_max))
    schedule = config.schedule()
    mask = config.loss_mask()
    dynamic = config.alpha_schedule == "dynamic"
    outer_interval = config.k_pi * config.k_alpha

    rows: list[MetricRow] = []
    actor_updates = 0
    outer_updates = 0
    ema_jumps = _Welford()
    last = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "q_bar": 0.0, "q_abs_bar": 0.0,
            "bc_loss": 0.0, "c_inf_sq": 0.0, "delta_l_inf_bc": 0.0}
    td_loss = 0.0
    alpha_value = alpha_schedule_value(schedule, alpha_state, 0)
    t0 = time.perf_counter()

    for i in range(1, config.total_steps + 1):
        batch = sample_batch(dataset, config.batch_size, rng_batch)
        critics, td_loss = critic_update(
            critics, actor.spec, actor.target, batch, config.gamma,
            config.policy_noise, config.noise_clip, env.max_action,
            config.critic_lr, rng_noise)

        if i % config.k_pi == 0:
            grads = inner_gradient_decomposed(actor, critics, batch)
            alpha_value = alpha_schedule_value(schedule, alpha_state, i)
            alpha_state = ema_update(alpha_state, grads.q_mean)
            if alpha_state.ema_q_prev is not None:
                ema_jumps.add(alpha_state.ema_q - alpha_state.ema_q_prev)
            step = inner_update(actor, alpha_value, grads, config.actor_lr)

            if dynamic and i % outer_interval == 0:
                outer = outer_losses(step, actor.spec, critics, batch, actor.params,
                                     alpha_state, alpha_value, mask)
                alpha_state = alpha_meta_step(alpha_state, outer.g_outer,
                                              step.g_rl_norm, config.actor_lr)
                outer_updates += 1
                last.update(l1=outer.l1, l2=outer.l2, l3=outer.l3,
                            c_inf_sq=outer.c_inf_sq,
                            delta_l_inf_bc=outer.delta_l_inf_bc)

            actor.params = step.theta_tilde
            actor.target = soft_update(actor.target, actor.params, config.tau)
            critics = soft_update_targets(critics, config.tau)
            actor_updates += 1
            last.update(q_bar=grads.q_mean, q_abs_bar=grads.q_abs_mean,
                        bc_loss=grads.bc_loss)
            if not np.isfinite(step.inner_loss_value):
                raise TrainingDiverged("non-finite inner loss", i, rows[-10:])

        if not np.isfinite(td_loss):
            raise TrainingDiverged("non-finite TD loss", i, rows[-10:])

        if i % config.log_every == 0:
            score = None
            if i % config.eval_every == 0:
                policy = actor_policy(actor.spec, actor.params,
                                      dataset.state_mean, dataset.state_std)
                score = evaluate_policy(policy, env, scale, config.eval_episodes,
                                        rng_eval)
            rows.append(MetricRow(
                global_step=i,
                alpha=alpha_schedule_value(schedule, alpha_state, i),
                l1=last["l1"], l2=last["l2"], l3=last["l3"],
                q_bar=last["q_bar"], q_abs_bar=last["q_abs_bar"],
                bc_loss=last["bc_loss"], td_loss=td_loss,
                c_inf_sq=last["c_inf_sq"],
                delta_l_inf_bc=last["delta_l_inf_bc"],
                normalized_score=score,
                wall_ms=(time.perf_counter() - t0) * 1000.0,
            ))

    wall_s = time.perf_counter() - t0
    summary = {
        "wall_seconds": wall_s,
        "steps_per_second": config.total_steps / wall_s if wall_s > 0 else float("inf"),
        "actor_updates": actor_updates,
        "outer_updates": outer_updates,
        "final_alpha": alpha_schedule_value(schedule, alpha_state, config.total_steps),
        "alpha_lr_final": alpha_state.lr,
        "ema_jump_variance": ema_jumps.variance,
        "ema_jump_count": ema_jumps.n,
    }
    return RunArtifact(
        config=config, rows=rows,
        actor_spec=actor.spec, actor_params=actor.params,
        critic_spec=critics.spec, q1_params=critics.q1, q2_params=critics.q2,
        state_mean=dataset.state_mean, state_std=dataset.state_std,
        score_scale=scale, summary=summary)


def _format_value(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def write_metrics_csv(rows: list[MetricRow], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_format_value(getattr(row, c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path: str | Path) -> list[MetricRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for rec in reader:
            rows.append(MetricRow(
                global_step=int(rec["global_step"]),
                alpha=float(rec["alpha"]),
                l1=float(rec["l1"]), l2=float(rec["l2"]), l3=float(rec["l3"]),
                q_bar=float(rec["q_bar"]), q_abs_bar=float(rec["q_abs_bar"]),
                bc_loss=float(rec["bc_loss"]), td_loss=float(rec["td_loss"]),
                c_inf_sq=float(rec["c_inf_sq"]),
                delta_l_inf_bc=float(rec["delta_l_inf_bc"]),
                normalized_score=(float(rec["normalized_score"])
                                  if rec["normalized_score"] else None),
                wall_ms=float(rec["wall_ms"]),
            ))
    return rows


def save_artifact(artifact: RunArtifact, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(artifact.config.to_json())
    write_metrics_csv(artifact.rows, out / "metrics.csv")
    with open(out / "artifact.bin", "wb") as f:
        pickle.dump(artifact, f)
    emit_curves(artifact, out / "curves")
    return out


def load_artifact(run_dir: str | Path) -> RunArtifact:
    with open(Path(run_dir) / "artifact.bin", "rb") as f:
        return pickle.load(f)


def emit_curves(artifact: RunArtifact, out_dir: str | Path) -> list[Path]:
    """Write alpha_curve.csv, score_curve.csv, and losses.csv from the rows."""
    if not artifact.rows:
        raise ValueError("artifact has no metric rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    path = out / "alpha_curve.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["global_step", "alpha"])
        for row in artifact.rows:
            writer.writerow([row.global_step, _format_value(row.alpha)])
    paths.append(path)

    path = out / "score_curve.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["global_step", "normalized_score"])
        for row in artifact.rows:
            if row.normalized_score is not None:
                writer.writerow([row.global_step, _format_value(row.normalized_score)])
    paths.append(path)

    loss_cols = ("l1", "l2", "l3", "q_bar", "q_abs_bar", "bc_loss", "td_loss",
                 "c_inf_sq", "delta_l_inf_bc")
    path = out / "losses.csv"
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["global_step", *loss_cols])
        for row in artifact.rows:
            writer.writerow([row.global_step,
                             *(_format_value(getattr(row, c)) for c in loss_cols)])
    paths.append(path)
    return paths
