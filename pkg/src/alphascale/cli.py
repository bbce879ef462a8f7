"""Command-line front end.

Verbs: gen-data, train, eval, ablate, profile, probe-theory, emit-curves.
Run configuration comes from an optional flat JSON file (--config) with every
field overridable by a --<field-name> flag.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bounds import run_theory_probes, write_probe_report
from .data import load_dataset, make_dataset, save_dataset
from .envs import compute_score_scale, make_env
from .harness import (RunConfig, actor_policy, emit_curves, evaluate_policy,
                      load_artifact, run_training, save_artifact)
from .suites import SUITES, format_table, run_ablation_suite, time_profile


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser, require_seed: bool) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="flat JSON file with RunConfig fields")
    for f in dataclasses.fields(RunConfig):
        if f.name == "seed" and require_seed:
            continue
        caster = _parse_bool if f.type == "bool" else type(f.default)
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            type=caster, default=None, metavar=f.name.upper())
    if require_seed:
        parser.add_argument("--seed", type=int, required=True)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config is not None:
        values.update(json.loads(Path(args.config).read_text()))
    for f in dataclasses.fields(RunConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            values[f.name] = override
    return RunConfig(**values)


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alphascale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and store an offline dataset")
    p.add_argument("--env", required=True, choices=("pointmass1d", "mazelite2d"))
    p.add_argument("--source", required=True,
                   choices=("random", "medium", "expert", "replay_mix"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="run one training configuration")
    _add_config_flags(p, require_seed=True)
    p.add_argument("--dataset", type=Path, default=None,
                   help="optional stored dataset (otherwise generated on the fly)")
    p.add_argument("--out", type=Path, required=True, help="run directory")

    p = sub.add_parser("eval", help="re-evaluate a stored run")
    p.add_argument("--run", type=Path, required=True, help="run directory")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="run an ablation suite")
    _add_config_flags(p, require_seed=False)
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--seeds", type=_parse_int_list, default=[0, 1, 2, 3],
                   help="comma-separated seeds")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("profile", help="wall-time overhead vs fixed alpha")
    _add_config_flags(p, require_seed=False)
    p.add_argument("--k-alpha-values", type=_parse_int_list, default=[10, 30])
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("probe-theory", help="numeric checks of the analysis")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("emit-curves", help="write curve CSVs from a stored run")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None,
                   help="defaults to <run>/curves")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "gen-data":
        env = make_env(args.env)
        dataset = make_dataset(env, args.source, args.n, args.seed)
        args.out.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(dataset, args.out)
        print(f"wrote {len(dataset)} transitions to {args.out}")
        return 0

    if args.command == "train":
        config = _config_from_args(args)
        dataset = load_dataset(args.dataset) if args.dataset else None
        artifact = run_training(config, dataset=dataset)
        save_artifact(artifact, args.out)
        summary = artifact.summary
        print(f"run complete: final score "
              f"{artifact.final_score():.2f}, final alpha "
              f"{summary['final_alpha']:.4f}, "
              f"{summary['wall_seconds']:.1f}s -> {args.out}")
        return 0

    if args.command == "eval":
        artifact = load_artifact(args.run)
        env = make_env(artifact.config.env_id)
        scale = compute_score_scale(env, artifact.config.dataset_seed)
        policy = actor_policy(artifact.actor_spec, artifact.actor_params,
                              artifact.state_mean, artifact.state_std)
        score = evaluate_policy(policy, env, scale, args.episodes, args.seed)
        print(f"normalized score over {args.episodes} episodes: {score:.2f}")
        return 0

    if args.command == "ablate":
        config = _config_from_args(args)
        results = run_ablation_suite(args.suite, config, args.seeds, out_dir=args.out)
        print(format_table(results))
        return 0

    if args.command == "profile":
        config = _config_from_args(args)
        rows = time_profile(config, args.k_alpha_values, args.steps)
        for row in rows:
            print(f"{row.arm:>12s}: {row.wall_seconds:8.1f}s  "
                  f"outer updates {row.outer_updates:6d}  "
                  f"overhead {row.overhead_pct:+.1f}%")
        if args.out is not None:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(json.dumps(
                [dataclasses.asdict(r) for r in rows], indent=2) + "\n")
        return 0

    if args.command == "probe-theory":
        report = run_theory_probes(seed=args.seed, prop1_instances=args.instances,
                                   supnorm_instances=args.instances)
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out is not None:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            write_probe_report(report, args.out)
        print(text)
        ok = (report["prop1"]["violations"] == 0
              and report["supnorm_lemma"]["violations"] == 0)
        return 0 if ok else 1

    if args.command == "emit-curves":
        artifact = load_artifact(args.run)
        out = args.out if args.out is not None else args.run / "curves"
        paths = emit_curves(artifact, out)
        for path in paths:
            print(f"wrote {path}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
