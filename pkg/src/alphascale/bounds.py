"""Numeric checks of the analysis backing the outer criteria.

The inequalities verified here relate three measurable per-step quantities:
the change in expected Q under a policy update (``delta_q``), the change in
BC loss (``delta_l_bc``), and the pre-update BC distance (``c``). Synthetic
critics that are exactly Lipschitz in the action make every instance a true
theorem instance, so any violation is a bug, not noise. Constants that cannot
be measured on real runs (the Lipschitz product ``kappa``) stay free inputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class LipschitzCritic:
    """Q(s, a) = scale * <direction, a> + bounded_offset(s).

    ``direction`` is a unit vector, so the action-Lipschitz constant is exactly
    ``scale``. The state offset is a fixed random tanh feature map; it cancels
    in every action-difference the bounds look at.
    """

    direction: np.ndarray
    scale: float
    feat_w: np.ndarray
    feat_b: np.ndarray
    feat_out: np.ndarray

    @staticmethod
    def create(state_dim: int, action_dim: int, scale: float,
               rng: np.random.Generator, features: int = 8) -> "LipschitzCritic":
        if scale <= 0:
            raise ValueError("scale must be positive")
        direction = rng.normal(size=action_dim)
        direction = direction / np.linalg.norm(direction)
        return LipschitzCritic(
            direction=direction,
            scale=float(scale),
            feat_w=rng.normal(size=(features, state_dim)),
            feat_b=rng.normal(size=features),
            feat_out=rng.normal(size=features),
        )

    def value(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        offset = np.tanh(states @ self.feat_w.T + self.feat_b) @ self.feat_out
        return self.scale * (actions @ self.direction) + offset


@dataclass
class BoundReport:
    """Outcome of the mutual-bound check on one instance.

    Slack is (inequality RHS - LHS) after rewriting each inequality as
    LHS <= RHS, so slack >= 0 means it holds.
    """

    c: float
    delta_q: float
    delta_l_bc: float
    lower_bound_holds: bool
    upper_bound_holds: bool
    slack_lower: float
    slack_upper: float


def prop1_bounds(c: float, delta_q: float, delta_l_bc: float, l_q: float,
                 tol: float = 1e-9) -> BoundReport:
    """Mutual bounds between the BC-loss change and the squared Q change.

    Checks, for an action-Lipschitz-``l_q`` critic:

        delta_l_bc >= max(2c|dQ|/l_q - dQ^2/l_q^2, 0, dQ^2/l_q^2 - 2c|dQ|/l_q)
        dQ^2       <= l_q^2 * (c + sqrt(c^2 + delta_l_bc))^2
    """
    if c < 0 or delta_l_bc < 0 or l_q <= 0:
        raise ValueError("c and delta_l_bc must be >= 0 and l_q > 0")
    ratio = abs(delta_q) / l_q
    lower = max(2.0 * c * ratio - ratio ** 2, 0.0, ratio ** 2 - 2.0 * c * ratio)
    upper = l_q ** 2 * (c + np.sqrt(c * c + delta_l_bc)) ** 2
    slack_lower = delta_l_bc - lower
    slack_upper = upper - delta_q ** 2
    return BoundReport(
        c=c,
        delta_q=delta_q,
        delta_l_bc=delta_l_bc,
        lower_bound_holds=slack_lower >= -tol,
        upper_bound_holds=slack_upper >= -tol,
        slack_lower=float(slack_lower),
        slack_upper=float(slack_upper),
    )


def measure_update_quantities(pi_old: Callable, pi_new: Callable, behavior: Callable,
                              critic: LipschitzCritic, states: np.ndarray):
    """Direct finite-sample expectations of (c, delta_q, delta_l_bc)."""
    a_old, a_new, a_beta = pi_old(states), pi_new(states), behavior(states)
    l_old = float(np.mean(np.sum((a_old - a_beta) ** 2, axis=1)))
    l_new = float(np.mean(np.sum((a_new - a_beta) ** 2, axis=1)))
    delta_q = float(np.mean(critic.value(states, a_new) - critic.value(states, a_old)))
    return np.sqrt(l_old), delta_q, abs(l_new - l_old)


def single_step_bound(delta_q: float, c_inf_sq: float, delta_l_inf: float,
                      kappa: float, gamma: float) -> float:
    """Worst-case one-step performance change implied by the measured stats."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if kappa < 0 or c_inf_sq < 0 or delta_l_inf < 0:
        raise ValueError("kappa, c_inf_sq and delta_l_inf must be >= 0")
    c_inf = np.sqrt(c_inf_sq)
    penalty = 3.0 * c_inf_sq + 3.0 * c_inf * np.sqrt(c_inf_sq + delta_l_inf) + delta_l_inf
    return float((delta_q - kappa * penalty) / (1.0 - gamma))


def supnorm_lemma_check(pi_old: Callable, pi_new: Callable, behavior: Callable,
                        states: np.ndarray, tol: float = 1e-9) -> bool:
    """Sup-norm policy displacement bound over a finite state sample:

        max ||pi_new - pi_old||^2 <= (c_inf + sqrt(c_inf^2 + delta_l_inf))^2
    """
    a_old, a_new, a_beta = pi_old(states), pi_new(states), behavior(states)
    x_inf = float(np.max(np.sum((a_new - a_old) ** 2, axis=1)))
    bc_old = np.sum((a_old - a_beta) ** 2, axis=1)
    bc_new = np.sum((a_new - a_beta) ** 2, axis=1)
    c_inf_sq = float(np.max(bc_old))
    delta_l_inf = float(np.max(np.abs(bc_new - bc_old)))
    c_inf = np.sqrt(c_inf_sq)
    rhs = (c_inf + np.sqrt(c_inf_sq + delta_l_inf)) ** 2
    return x_inf <= rhs + tol


@dataclass
class TaylorCheck:
    exact_minus_const: float
    linearized: float
    rel_err: float


def taylor_l3_check(c_inf_sq: float, delta_l_inf: float, kappa: float) -> TaylorCheck:
    """Quality of the small-jump linearization of the squared penalty bracket.

    In the regime delta_l_inf / c_inf_sq << 1,

        kappa^2 * (3c^2 + 3c sqrt(c^2 + dL) + dL)^2 - 36 kappa^2 c^4
            ~  30 kappa^2 c^2 dL
    """
    if c_inf_sq <= 0 or delta_l_inf < 0:
        raise ValueError("c_inf_sq must be > 0 and delta_l_inf >= 0")
    if delta_l_inf / c_inf_sq > 0.1:
        raise ValueError("outside the linearization regime: delta_l_inf / c_inf_sq > 0.1")
    c_inf = np.sqrt(c_inf_sq)
    bracket = 3.0 * c_inf_sq + 3.0 * c_inf * np.sqrt(c_inf_sq + delta_l_inf) + delta_l_inf
    exact = kappa ** 2 * bracket ** 2 - 36.0 * kappa ** 2 * c_inf_sq ** 2
    linearized = 30.0 * kappa ** 2 * c_inf_sq * delta_l_inf
    rel_err = abs(exact - linearized) / max(linearized, 1e-300)
    return TaylorCheck(float(exact), float(linearized), float(rel_err))


def _random_affine_policy(state_dim: int, action_dim: int, rng: np.random.Generator,
                          scale: float = 1.0) -> Callable:
    m = rng.normal(scale=scale, size=(action_dim, state_dim))
    d = rng.normal(scale=scale, size=action_dim)
    return lambda states: states @ m.T + d


def gradient_step_instance(state_dim: int, action_dim: int,
                           rng: np.random.Generator):
    """Random (pi_old, pi_new, behavior, critic) with the update and the
    behavior gap both along the critic's action-gradient direction.

    This is the regime a value-ascent step produces, and it is where the
    lower mutual bound is tight: the Cauchy-Schwarz and Jensen links in its
    derivation hold with equality, so both inequalities are exact theorems on
    every such instance. Updates in a generic direction can land in the
    middle band (c^2 < E||pi_new - pi_old||^2 < 4c^2) where the first branch
    of the lower bound does not apply.
    """
    critic = LipschitzCritic.create(state_dim, action_dim,
                                    float(rng.uniform(0.2, 5.0)), rng)
    w = critic.direction
    m = rng.normal(size=(action_dim, state_dim))
    d = rng.normal(size=action_dim)
    gap = float(rng.uniform(0.0, 3.0))
    step = float(rng.normal(scale=1.5))
    pi_old = lambda states, m=m, d=d: states @ m.T + d
    pi_new = lambda states, m=m, d=d: states @ m.T + d + step * w
    behavior = lambda states, m=m, d=d: states @ m.T + d - gap * w
    return pi_old, pi_new, behavior, critic


def run_theory_probes(seed: int = 0, prop1_instances: int = 1000,
                      supnorm_instances: int = 1000, sample_states: int = 256) -> dict:
    """Sweep random instances through every check and summarize as a report."""
    rng = np.random.default_rng(seed)
    prop1_violations = 0
    min_slack_lower = np.inf
    min_slack_upper = np.inf
    for _ in range(prop1_instances):
        sdim = int(rng.integers(1, 5))
        adim = int(rng.integers(1, 5))
        states = rng.uniform(-1.0, 1.0, (sample_states, sdim))
        pi_old, pi_new, behavior, critic = gradient_step_instance(sdim, adim, rng)
        c, dq, dl = measure_update_quantities(pi_old, pi_new, behavior, critic, states)
        report = prop1_bounds(c, dq, dl, critic.scale)
        if not (report.lower_bound_holds and report.upper_bound_holds):
            prop1_violations += 1
        min_slack_lower = min(min_slack_lower, report.slack_lower)
        min_slack_upper = min(min_slack_upper, report.slack_upper)

    # The upper bound needs no alignment: check it on fully independent pairs.
    upper_violations = 0
    for _ in range(prop1_instances):
        sdim = int(rng.integers(1, 5))
        adim = int(rng.integers(1, 5))
        states = rng.uniform(-1.0, 1.0, (sample_states, sdim))
        critic = LipschitzCritic.create(sdim, adim, float(rng.uniform(0.2, 5.0)), rng)
        c, dq, dl = measure_update_quantities(
            _random_affine_policy(sdim, adim, rng),
            _random_affine_policy(sdim, adim, rng),
            _random_affine_policy(sdim, adim, rng), critic, states)
        if not prop1_bounds(c, dq, dl, critic.scale).upper_bound_holds:
            upper_violations += 1

    supnorm_violations = 0
    for _ in range(supnorm_instances):
        sdim = int(rng.integers(1, 5))
        adim = int(rng.integers(1, 5))
        states = rng.uniform(-1.0, 1.0, (64, sdim))
        ok = supnorm_lemma_check(
            _random_affine_policy(sdim, adim, rng),
            _random_affine_policy(sdim, adim, rng),
            _random_affine_policy(sdim, adim, rng),
            states)
        if not ok:
            supnorm_violations += 1

    taylor_grid = {}
    for ratio in (1e-2, 1e-3, 1e-4):
        check = taylor_l3_check(1.0, ratio, kappa=1.0)
        taylor_grid[f"{ratio:.0e}"] = asdict(check)

    return {
        "prop1": {
            "instances": prop1_instances,
            "violations": prop1_violations,
            "min_slack_lower": float(min_slack_lower),
            "min_slack_upper": float(min_slack_upper),
        },
        "prop1_upper_independent_pairs": {
            "instances": prop1_instances,
            "violations": upper_violations,
        },
        "supnorm_lemma": {
            "instances": supnorm_instances,
            "violations": supnorm_violations,
        },
        "taylor_l3": taylor_grid,
    }


def write_probe_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
