"""TD3+BC backbone: clipped double-Q critic updates and the decomposed actor step.

The actor objective is ``-lambda * mean Q1(s, pi(s)) + mean ||pi(s) - a||^2``
with ``lambda = alpha / mean |Q1(s, pi(s))|`` and the denominator treated as a
constant. Splitting the gradient into a normalized RL part and a BC part makes
the one-step update exactly affine in alpha:

    theta_tilde(alpha) = theta - eta_theta * (alpha * g_rl_norm + g_bc)

which is what gives the meta level its closed-form derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TransitionBatch
from .errors import DegenerateCritic, NonFiniteError
from .nets import MlpSpec, init_params, mlp_backward, mlp_forward
from .params import AdamState, ParamVector, adam_step, soft_update

Q_ABS_FLOOR = 1e-8
ACTOR_FINAL_WEIGHT_SCALE = 0.01


@dataclass
class ActorState:
    """Deterministic policy network, its Polyak target, and an optimizer slot.

    The optimizer slot exists for parity with the critic state; the shipped
    actor update is the plain gradient step of ``inner_update``.
    """

    spec: MlpSpec
    params: ParamVector
    target: ParamVector
    adam: AdamState


@dataclass
class CriticPair:
    """Twin Q networks with Polyak targets and per-critic Adam state."""

    spec: MlpSpec
    q1: ParamVector
    q2: ParamVector
    q1_target: ParamVector
    q2_target: ParamVector
    adam1: AdamState
    adam2: AdamState
    robust: bool


def make_actor(state_dim: int, action_dim: int, max_action: float,
               rng: np.random.Generator, width: int = 256) -> ActorState:
    spec = MlpSpec(state_dim, (width, width), action_dim,
                   output_transform="scaled_tanh", max_action=max_action)
    params = init_params(spec, rng, final_weight_scale=ACTOR_FINAL_WEIGHT_SCALE)
    return ActorState(spec, params, params.copy(), AdamState.for_params(params))


def make_critics(state_dim: int, action_dim: int, rng: np.random.Generator,
                 width: int = 256, robust: bool = True) -> CriticPair:
    """Robust shape: three hidden layers with LayerNorm; otherwise the vanilla
    two-layer critic without LayerNorm."""
    hidden = (width,) * 3 if robust else (width,) * 2
    spec = MlpSpec(state_dim + action_dim, hidden, 1,
                   layernorm_after_hidden=robust)
    q1 = init_params(spec, rng)
    q2 = init_params(spec, rng)
    return CriticPair(spec, q1, q2, q1.copy(), q2.copy(),
                      AdamState.for_params(q1), AdamState.for_params(q2), robust)


def td_targets(critics: CriticPair, actor_spec: MlpSpec, actor_target: ParamVector,
               batch: TransitionBatch, gamma: float, noise_std: float,
               noise_clip: float, max_action: float,
               rng: np.random.Generator) -> np.ndarray:
    """Clipped double-Q targets with target-policy smoothing noise."""
    next_a, _ = mlp_forward(actor_spec, actor_target, batch.s2)
    noise = np.clip(rng.normal(0.0, noise_std, next_a.shape), -noise_clip, noise_clip)
    next_a = np.clip(next_a + noise, -max_action, max_action)
    sa2 = np.concatenate([batch.s2, next_a], axis=1)
    q1t, _ = mlp_forward(critics.spec, critics.q1_target, sa2)
    q2t, _ = mlp_forward(critics.spec, critics.q2_target, sa2)
    y = batch.r + gamma * (1.0 - batch.done) * np.minimum(q1t[:, 0], q2t[:, 0])
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise NonFiniteError("non-finite TD target", index=bad)
    return y


def critic_update(critics: CriticPair, actor_spec: MlpSpec, actor_target: ParamVector,
                  batch: TransitionBatch, gamma: float, noise_std: float,
                  noise_clip: float, max_action: float, lr: float,
                  rng: np.random.Generator) -> tuple[CriticPair, float]:
    """One Adam step per critic on the squared error to shared frozen targets.

    Returns the updated pair and the summed per-critic MSE.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    y = td_targets(critics, actor_spec, actor_target, batch, gamma, noise_std,
                   noise_clip, max_action, rng)
    sa = np.concatenate([batch.s, batch.a], axis=1)
    n = len(batch)
    total_loss = 0.0
    new_params, new_adam = [], []
    for params, adam in ((critics.q1, critics.adam1), (critics.q2, critics.adam2)):
        q, cache = mlp_forward(critics.spec, params, sa)
        diff = q[:, 0] - y
        total_loss += float(np.mean(diff * diff))
        grad, _ = mlp_backward(critics.spec, params, cache, (2.0 * diff / n)[:, None])
        p, a = adam_step(adam, params, grad, lr)
        new_params.append(p)
        new_adam.append(a)
    updated = CriticPair(critics.spec, new_params[0], new_params[1],
                         critics.q1_target, critics.q2_target,
                         new_adam[0], new_adam[1], critics.robust)
    return updated, total_loss


def soft_update_targets(critics: CriticPair, tau: float) -> CriticPair:
    return CriticPair(critics.spec, critics.q1, critics.q2,
                      soft_update(critics.q1_target, critics.q1, tau),
                      soft_update(critics.q2_target, critics.q2, tau),
                      critics.adam1, critics.adam2, critics.robust)


@dataclass
class InnerGradients:
    """Actor-loss gradient split into its alpha-scaled and constant parts.

    ``g_rl_norm`` is the gradient of the negated, |Q|-normalized value term;
    ``g_bc`` the gradient of the mean squared action error. The full inner
    gradient at scale ``alpha`` is ``alpha * g_rl_norm + g_bc`` exactly.
    """

    g_rl_norm: ParamVector
    g_bc: ParamVector
    q_abs_mean: float
    q_mean: float
    bc_loss: float


@dataclass
class InnerStepResult:
    theta_tilde: ParamVector
    g_rl_norm: ParamVector
    g_bc: ParamVector
    lam: float
    q_abs_mean: float
    inner_loss_value: float
    q_mean: float
    bc_loss: float


def inner_gradient_decomposed(actor: ActorState, critics: CriticPair,
                              batch: TransitionBatch) -> InnerGradients:
    """Evaluate the actor loss pieces at the current policy on one minibatch.

    The |Q| normalizer is detached: it enters only as the scalar divisor of
    the value term, never through the backward pass.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    actions, cache_pi = mlp_forward(actor.spec, actor.params, batch.s)
    sa = np.concatenate([batch.s, actions], axis=1)
    q, cache_q = mlp_forward(critics.spec, critics.q1, sa)
    qvals = q[:, 0]
    q_abs_mean = float(np.mean(np.abs(qvals)))
    if q_abs_mean < Q_ABS_FLOOR:
        raise DegenerateCritic(f"mean |Q| = {q_abs_mean:.3e} below {Q_ABS_FLOOR:.0e}")
    q_mean = float(np.mean(qvals))

    upstream_q = np.full((n, 1), -1.0 / (n * q_abs_mean))
    _, d_sa = mlp_backward(critics.spec, critics.q1, cache_q, upstream_q)
    d_actions = d_sa[:, batch.s.shape[1]:]
    g_rl_norm, _ = mlp_backward(actor.spec, actor.params, cache_pi, d_actions)

    diff = actions - batch.a
    bc_loss = float(np.sum(diff * diff) / n)
    g_bc, _ = mlp_backward(actor.spec, actor.params, cache_pi, 2.0 * diff / n)
    return InnerGradients(g_rl_norm, g_bc, q_abs_mean, q_mean, bc_loss)


def inner_update(actor: ActorState, alpha: float, grads: InnerGradients,
                 eta_theta: float) -> InnerStepResult:
    """Plain gradient step producing theta_tilde(alpha).

    Deliberately not an Adam step: keeping the update a fixed-learning-rate
    descent makes d theta_tilde / d alpha = -eta_theta * g_rl_norm exact.
    """
    new_values = actor.params.values - eta_theta * (
        alpha * grads.g_rl_norm.values + grads.g_bc.values)
    if not np.all(np.isfinite(new_values)):
        bad = int(np.flatnonzero(~np.isfinite(new_values))[0])
        raise NonFiniteError("non-finite actor parameters after inner step",
                             tensor=actor.params.layout.tensor_at(bad))
    lam = alpha / grads.q_abs_mean
    inner_loss = -lam * grads.q_mean + grads.bc_loss
    return InnerStepResult(
        theta_tilde=ParamVector(new_values, actor.params.layout),
        g_rl_norm=grads.g_rl_norm,
        g_bc=grads.g_bc,
        lam=lam,
        q_abs_mean=grads.q_abs_mean,
        inner_loss_value=inner_loss,
        q_mean=grads.q_mean,
        bc_loss=grads.bc_loss,
    )
