"""Outer level of the bilevel loop: scoring one inner step and updating alpha.

Three criteria are evaluated at the post-step policy theta_tilde on the same
minibatch that produced the step:

* ``l1``   -- the backbone objective: -alpha_hat * Qbar / |Q|bar + BC loss,
  with the alpha coefficient and the |Q| divisor treated as constants.
* ``l2``   -- squared jump of the EMA-smoothed Qbar track; only the newest
  (1 - beta) * Qbar contribution carries gradient.
* ``l3``   -- (l2 value, constant) * c_inf^2 * sup-row BC-loss jump, gradient
  flowing through the single maximizing row.

Because theta_tilde is affine in alpha with slope -eta_theta * g_rl_norm, the
meta-derivative collapses to a dot product:

    dL_outer / d alpha = -eta_theta * <g_outer, g_rl_norm>
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import TransitionBatch
from .errors import DegenerateCritic, NonFiniteError
from .nets import MlpSpec, mlp_backward, mlp_forward
from .params import ParamVector
from .td3bc import CriticPair, InnerStepResult, Q_ABS_FLOOR


@dataclass(frozen=True)
class AlphaState:
    """The learnable scale, its decaying learning rate, and the EMA track."""

    alpha: float
    lr: float
    lr_decay_per_update: float = 1.0
    beta_ema: float = 0.995
    ema_q: float | None = None
    ema_q_prev: float | None = None
    update_count: int = 0
    clamp: tuple[float, float] = (1e-4, 1e3)

    def __post_init__(self):
        if not 0.0 < self.beta_ema < 1.0:
            raise ValueError("beta_ema must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("alpha learning rate must be positive")
        if not self.clamp[0] <= self.alpha <= self.clamp[1]:
            raise ValueError(f"alpha {self.alpha} outside clamp {self.clamp}")


def ema_update(state: AlphaState, q_bar: float) -> AlphaState:
    """Fold one Qbar observation into the EMA track.

    The first observation seeds the track; afterwards
    ``ema <- beta * ema + (1 - beta) * q_bar``.
    """
    if not np.isfinite(q_bar):
        raise NonFiniteError("non-finite q_bar passed to ema_update")
    if state.ema_q is None:
        return replace(state, ema_q=float(q_bar))
    new_ema = state.beta_ema * state.ema_q + (1.0 - state.beta_ema) * float(q_bar)
    return replace(state, ema_q=new_ema, ema_q_prev=state.ema_q)


@dataclass(frozen=True)
class LossMask:
    """Which stabilizer terms enter the outer total (the base term always does)."""

    use_l2: bool = True
    use_l3: bool = True


@dataclass
class OuterLossBreakdown:
    """Outer criteria values (as contributed to the total: masked terms are 0),
    the cached sup statistics, and the gradient w.r.t. theta_tilde."""

    l1: float
    l2: float
    l3: float
    q_bar_t1: float
    q_abs_bar_t1: float
    bc_loss_t1: float
    c_inf_sq: float
    delta_l_inf_bc: float
    g_outer: ParamVector

    @property
    def total(self) -> float:
        return self.l1 + self.l2 + self.l3


def outer_losses(step: InnerStepResult, actor_spec: MlpSpec, critics: CriticPair,
                 batch: TransitionBatch, prev_actor_params: ParamVector,
                 state: AlphaState, alpha: float,
                 mask: LossMask = LossMask()) -> OuterLossBreakdown:
    """Score theta_tilde on the minibatch that produced it.

    ``prev_actor_params`` must be the pre-update policy: it anchors the
    sup-norm statistics c_inf^2 (gradient-free) and the per-row BC-loss jump.
    Detach rules: alpha and the |Q| divisor are constants in l1; the stored
    EMA is the constant baseline in l2; l3 multiplies the l2 *value* (even
    when l2 is masked out of the total) and only its newest BC term carries
    gradient, through the first maximizing row.
    """
    n = len(batch)
    state_dim = batch.s.shape[1]

    pi_new, cache_pi = mlp_forward(actor_spec, step.theta_tilde, batch.s)
    sa = np.concatenate([batch.s, pi_new], axis=1)
    q, cache_q = mlp_forward(critics.spec, critics.q1, sa)
    qvals = q[:, 0]
    q_bar = float(np.mean(qvals))
    q_abs_bar = float(np.mean(np.abs(qvals)))
    if q_abs_bar < Q_ABS_FLOOR:
        raise DegenerateCritic(f"mean |Q| = {q_abs_bar:.3e} below {Q_ABS_FLOOR:.0e}")

    diff_new = pi_new - batch.a
    bc_rows_new = np.sum(diff_new * diff_new, axis=1)
    bc_loss = float(np.mean(bc_rows_new))

    pi_old, _ = mlp_forward(actor_spec, prev_actor_params, batch.s)
    diff_old = pi_old - batch.a
    bc_rows_old = np.sum(diff_old * diff_old, axis=1)
    c_inf_sq = float(np.max(bc_rows_old))

    jump_rows = bc_rows_new - bc_rows_old
    j = int(np.argmax(np.abs(jump_rows)))  # first index on ties
    delta_l_inf = float(np.abs(jump_rows[j]))

    l1 = -alpha * q_bar / q_abs_bar + bc_loss

    if state.ema_q is None:
        l2_value = 0.0
        dl2_dqbar = 0.0
    else:
        ema_before = state.ema_q
        ema_after = state.beta_ema * ema_before + (1.0 - state.beta_ema) * q_bar
        l2_value = (ema_after - ema_before) ** 2
        dl2_dqbar = 2.0 * (ema_after - ema_before) * (1.0 - state.beta_ema)
    l3_value = l2_value * c_inf_sq * delta_l_inf

    # Gradient through the Q path: l1 contributes -alpha_hat / |Q|bar per
    # sample, l2 (when enabled) its chain through q_bar.
    per_sample_q = -alpha / q_abs_bar
    if mask.use_l2:
        per_sample_q += dl2_dqbar
    upstream_q = np.full((n, 1), per_sample_q / n)
    _, d_sa = mlp_backward(critics.spec, critics.q1, cache_q, upstream_q)
    d_actions = d_sa[:, state_dim:]

    # Direct BC paths on pi_new: the mean-BC term of l1, plus l3's subgradient
    # at the maximizing row.
    d_actions = d_actions + 2.0 * diff_new / n
    if mask.use_l3 and delta_l_inf > 0.0:
        coeff = l2_value * c_inf_sq * np.sign(jump_rows[j])
        d_actions[j] += coeff * 2.0 * diff_new[j]

    g_outer, _ = mlp_backward(actor_spec, step.theta_tilde, cache_pi, d_actions)

    return OuterLossBreakdown(
        l1=l1,
        l2=l2_value if mask.use_l2 else 0.0,
        l3=l3_value if mask.use_l3 else 0.0,
        q_bar_t1=q_bar,
        q_abs_bar_t1=q_abs_bar,
        bc_loss_t1=bc_loss,
        c_inf_sq=c_inf_sq,
        delta_l_inf_bc=delta_l_inf,
        g_outer=g_outer,
    )


def alpha_meta_step(state: AlphaState, g_outer: ParamVector, g_rl_norm: ParamVector,
                    eta_theta: float) -> AlphaState:
    """Closed-form second-order step on alpha.

    With d theta_tilde / d alpha = -eta_theta * g_rl_norm, the outer derivative
    is -eta_theta * <g_outer, g_rl_norm>; alpha descends it, is clamped, and
    the alpha learning rate decays by its per-update factor.
    """
    dot = float(g_outer.values @ g_rl_norm.values)
    if not np.isfinite(dot):
        raise NonFiniteError("non-finite meta-gradient dot product")
    d_alpha = -eta_theta * dot
    new_alpha = float(np.clip(state.alpha - state.lr * d_alpha, *state.clamp))
    return replace(state, alpha=new_alpha, lr=state.lr * state.lr_decay_per_update,
                   update_count=state.update_count + 1)


@dataclass(frozen=True)
class AlphaSchedule:
    """How alpha is chosen each actor step: learned, constant, or interpolated."""

    mode: str  # dynamic | fixed | linear
    fixed_value: float = 2.5
    start: float = 2.5
    end: float = 2.5
    total_steps: int = 1

    def __post_init__(self):
        if self.mode not in ("dynamic", "fixed", "linear"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "linear" and self.total_steps < 1:
            raise ValueError("linear schedule requires total_steps >= 1")


def alpha_schedule_value(schedule: AlphaSchedule, state: AlphaState,
                         global_step: int) -> float:
    if schedule.mode == "dynamic":
        return state.alpha
    if schedule.mode == "fixed":
        return schedule.fixed_value
    frac = min(global_step / schedule.total_steps, 1.0)
    return schedule.start + (schedule.end - schedule.start) * frac
