"""Ablation suites and runtime profiling built on top of single runs."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import OfflineDataset, make_dataset
from .envs import make_env
from .harness import RunArtifact, RunConfig, run_training, save_artifact

SUITES = ("alpha_schedules", "loss_terms", "robust_critic")


@dataclass
class ArmResult:
    arm: str
    seeds: list[int]
    scores: list[float]
    final_alphas: list[float]
    mean_score: float
    std_score: float
    pct_diff: float  # relative to the suite's baseline arm
    ema_jump_variances: list[float]


def _dataset_for(config: RunConfig, cache: dict) -> OfflineDataset:
    key = (config.env_id, config.dataset_source, config.dataset_n, config.dataset_seed)
    if key not in cache:
        env = make_env(config.env_id)
        cache[key] = make_dataset(env, config.dataset_source, config.dataset_n,
                                  config.dataset_seed)
    return cache[key]


def _run_arm(arm: str, base: RunConfig, overrides: dict, seeds: list[int],
             cache: dict, out_dir: Path | None) -> tuple[list[RunArtifact], ArmResult]:
    artifacts = []
    for seed in seeds:
        config = dataclasses.replace(base, seed=seed, **overrides)
        artifact = run_training(config, dataset=_dataset_for(config, cache))
        if out_dir is not None:
            save_artifact(artifact, out_dir / f"{arm}_seed{seed}")
        artifacts.append(artifact)
    scores = [a.final_score() for a in artifacts]
    result = ArmResult(
        arm=arm,
        seeds=list(seeds),
        scores=scores,
        final_alphas=[a.summary["final_alpha"] for a in artifacts],
        mean_score=float(np.mean(scores)),
        std_score=float(np.std(scores)),
        pct_diff=0.0,
        ema_jump_variances=[a.summary["ema_jump_variance"] for a in artifacts],
    )
    return artifacts, result


def _fill_pct_diff(results: list[ArmResult], baseline_arm: str) -> None:
    base = next(r for r in results if r.arm == baseline_arm)
    for r in results:
        denom = abs(base.mean_score)
        r.pct_diff = 0.0 if r.arm == baseline_arm else (
            100.0 * (r.mean_score - base.mean_score) / denom if denom > 0 else float("nan"))


def converged_alpha_from(artifacts: list[RunArtifact]) -> float:
    """Protocol for the 'converged' arm: the final alpha of prior dynamic runs
    on the same dataset (median across seeds)."""
    if not artifacts:
        raise ValueError(
            "converged arm requires a prior dynamic run to read its final alpha from")
    return float(np.median([a.summary["final_alpha"] for a in artifacts]))


def run_ablation_suite(suite: str, base: RunConfig, seeds: list[int],
                       out_dir: str | Path | None = None) -> list[ArmResult]:
    """Run one ablation family and aggregate normalized scores per arm.

    ``alpha_schedules``: dynamic (learned alpha), a constant 2.5, the constant
    the dynamic runs converged to, and a linear ramp toward that constant.
    ``loss_terms``: outer-loss masks l1 / l1+l2 / l1+l3 / full.
    ``robust_critic``: robust critic on vs off.
    """
    if not seeds:
        raise ValueError("seeds must be nonempty")
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    out = Path(out_dir) if out_dir is not None else None
    cache: dict = {}
    results: list[ArmResult] = []

    if suite == "alpha_schedules":
        dynamic_artifacts, dynamic_result = _run_arm(
            "dynamic", base, {"alpha_schedule": "dynamic"}, seeds, cache, out)
        converged = converged_alpha_from(dynamic_artifacts)
        _, naive = _run_arm(
            "naive", base, {"alpha_schedule": "fixed", "alpha_fixed": 2.5},
            seeds, cache, out)
        _, conv = _run_arm(
            "converged", base, {"alpha_schedule": "fixed", "alpha_fixed": converged},
            seeds, cache, out)
        _, linear = _run_arm(
            "linear", base, {"alpha_schedule": "linear", "alpha_linear_end": converged},
            seeds, cache, out)
        results = [naive, conv, linear, dynamic_result]
        _fill_pct_diff(results, "naive")
    elif suite == "loss_terms":
        arms = [
            ("l1_only", {"use_l2": False, "use_l3": False}),
            ("l1_l2", {"use_l2": True, "use_l3": False}),
            ("l1_l3", {"use_l2": False, "use_l3": True}),
            ("full", {"use_l2": True, "use_l3": True}),
        ]
        for arm, overrides in arms:
            results.append(_run_arm(arm, base, overrides, seeds, cache, out)[1])
        _fill_pct_diff(results, "full")
    else:  # robust_critic
        for arm, overrides in (("robust", {"robust_critic": True}),
                               ("no_robust", {"robust_critic": False})):
            results.append(_run_arm(arm, base, overrides, seeds, cache, out)[1])
        _fill_pct_diff(results, "robust")

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        table = [dataclasses.asdict(r) for r in results]
        (out / "summary.json").write_text(json.dumps(table, indent=2) + "\n")
    return results


def format_table(results: list[ArmResult]) -> str:
    lines = [f"{'arm':>12s} | {'score mean':>10s} | {'std':>8s} | {'pct diff':>8s}"]
    for r in results:
        lines.append(f"{r.arm:>12s} | {r.mean_score:10.2f} | {r.std_score:8.2f} | "
                     f"{r.pct_diff:7.1f}%")
    return "\n".join(lines)


@dataclass
class ProfileRow:
    arm: str
    k_alpha: int
    alpha_lr: float
    wall_seconds: float
    outer_updates: int
    overhead_pct: float  # vs the fixed-alpha reference


def time_profile(base: RunConfig, k_alpha_values: list[int], steps: int,
                 seed: int = 0) -> list[ProfileRow]:
    """Wall time of dynamic-alpha training vs a fixed-alpha reference.

    All arms run the same number of steps on the same dataset; the alpha
    learning rate is scaled proportionally to k_alpha so longer intervals take
    correspondingly larger steps.
    """
    cache: dict = {}
    reference = dataclasses.replace(
        base, alpha_schedule="fixed", alpha_fixed=base.alpha_init,
        total_steps=steps, seed=seed)
    ref_artifact = run_training(reference, dataset=_dataset_for(reference, cache))
    ref_row = ProfileRow("fixed", 0, 0.0, ref_artifact.summary["wall_seconds"],
                         ref_artifact.summary["outer_updates"], 0.0)
    rows = [ref_row]
    for k_alpha in k_alpha_values:
        scaled_lr = base.alpha_lr * (k_alpha / base.k_alpha)
        config = dataclasses.replace(
            base, alpha_schedule="dynamic", k_alpha=k_alpha, alpha_lr=scaled_lr,
            total_steps=steps, seed=seed)
        artifact = run_training(config, dataset=_dataset_for(config, cache))
        wall = artifact.summary["wall_seconds"]
        rows.append(ProfileRow(
            arm=f"dynamic_k{k_alpha}",
            k_alpha=k_alpha,
            alpha_lr=scaled_lr,
            wall_seconds=wall,
            outer_updates=artifact.summary["outer_updates"],
            overhead_pct=100.0 * (wall - ref_row.wall_seconds) / ref_row.wall_seconds,
        ))
    return rows
