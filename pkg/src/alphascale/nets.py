"""Hand-rolled MLP forward/backward passes with optional LayerNorm.

The backward pass reproduces the exact reverse-mode gradient of the recorded
forward pass; correctness is pinned against central finite differences in the
test suite. Everything runs in float64.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import CacheMismatch, DimensionMismatch, NonFiniteError
from .params import Layout, ParamVector

LAYERNORM_EPS = 1e-5


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one fully connected network.

    Hidden layers apply ``linear -> [layernorm] -> relu``; the output layer is
    linear followed by the output transform. ``scaled_tanh`` squashes into
    ``[-max_action, max_action]``.
    """

    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    output_transform: str = "identity"
    max_action: float | None = None
    layernorm_after_hidden: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise DimensionMismatch(f"all dimensions must be >= 1, got {dims}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.output_transform not in ("identity", "scaled_tanh"):
            raise ValueError(f"unsupported output transform {self.output_transform!r}")
        if self.output_transform == "scaled_tanh" and not (self.max_action and self.max_action > 0):
            raise ValueError("scaled_tanh requires max_action > 0")

    def layout(self) -> Layout:
        return _layout_for(self)

    def num_params(self) -> int:
        return self.layout().size


@functools.lru_cache(maxsize=None)
def _layout_for(spec: MlpSpec) -> Layout:
    shapes: list[tuple[str, tuple[int, ...]]] = []
    fan_in = spec.input_dim
    for i, width in enumerate(spec.hidden_dims):
        shapes.append((f"w{i}", (fan_in, width)))
        shapes.append((f"b{i}", (width,)))
        if spec.layernorm_after_hidden:
            shapes.append((f"ln_gain{i}", (width,)))
            shapes.append((f"ln_shift{i}", (width,)))
        fan_in = width
    shapes.append(("w_out", (fan_in, spec.output_dim)))
    shapes.append(("b_out", (spec.output_dim,)))
    return Layout(shapes)


def init_params(spec: MlpSpec, rng: np.random.Generator,
                final_weight_scale: float = 1.0) -> ParamVector:
    """Uniform +/- 1/sqrt(fan_in) init; LayerNorm gain 1, shift 0.

    ``final_weight_scale`` shrinks the output layer (actors start near zero
    actions with 0.01).
    """
    params = ParamVector.zeros(spec.layout())
    fan_in = spec.input_dim
    for i, width in enumerate(spec.hidden_dims):
        bound = 1.0 / np.sqrt(fan_in)
        params.view(f"w{i}")[:] = rng.uniform(-bound, bound, (fan_in, width))
        params.view(f"b{i}")[:] = rng.uniform(-bound, bound, width)
        if spec.layernorm_after_hidden:
            params.view(f"ln_gain{i}")[:] = 1.0
        fan_in = width
    bound = final_weight_scale / np.sqrt(fan_in)
    params.view("w_out")[:] = rng.uniform(-bound, bound, (fan_in, spec.output_dim))
    params.view("b_out")[:] = rng.uniform(-bound, bound, spec.output_dim)
    return params


@dataclass
class ForwardCache:
    """Intermediates of one forward pass, sufficient for its exact backward."""

    spec: MlpSpec
    x: np.ndarray                       # input batch
    layer_inputs: list[np.ndarray]      # input to each linear layer
    ln_xhat: list[np.ndarray | None]    # normalized pre-activations
    ln_inv_std: list[np.ndarray | None]  # per-sample 1/sqrt(var + eps)
    act_inputs: list[np.ndarray]        # relu inputs (post-layernorm)
    pre_transform: np.ndarray           # output-layer linear result
    tanh_u: np.ndarray | None           # tanh(pre_transform) when scaled_tanh


def layernorm_forward(z: np.ndarray, gain: np.ndarray, shift: np.ndarray,
                      eps: float = LAYERNORM_EPS):
    """Normalize each row to zero mean / unit variance, then scale and shift.

    Returns (output, xhat, inv_std); a zero-variance row maps to the shift
    because the eps-regularized normalizer keeps xhat finite (and zero).
    """
    mean = z.mean(axis=1, keepdims=True)
    centered = z - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return xhat * gain + shift, xhat, inv_std


def layernorm_backward(d_out: np.ndarray, xhat: np.ndarray, inv_std: np.ndarray,
                       gain: np.ndarray):
    """Gradients of layernorm_forward. Returns (dz, dgain, dshift)."""
    d = xhat.shape[1]
    dgain = (d_out * xhat).sum(axis=0)
    dshift = d_out.sum(axis=0)
    dxhat = d_out * gain
    row_mean = dxhat.mean(axis=1, keepdims=True)
    row_proj = (dxhat * xhat).mean(axis=1, keepdims=True)
    dz = (dxhat - row_mean - xhat * row_proj) * inv_std
    return dz, dgain, dshift


def mlp_forward(spec: MlpSpec, params: ParamVector,
                inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network on a batch of row vectors; returns (outputs, cache)."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionMismatch(
            f"inputs have shape {x.shape}, expected (batch, {spec.input_dim})",
            tensor="inputs")
    lay = spec.layout()
    if params.layout is not lay and params.layout != lay:
        raise DimensionMismatch("parameter vector does not match spec", tensor="params")

    h = x
    layer_inputs, ln_xhat, ln_inv_std, act_inputs = [], [], [], []
    for i in range(len(spec.hidden_dims)):
        layer_inputs.append(h)
        z = h @ params.view(f"w{i}") + params.view(f"b{i}")
        if spec.layernorm_after_hidden:
            a_in, xhat, inv_std = layernorm_forward(
                z, params.view(f"ln_gain{i}"), params.view(f"ln_shift{i}"))
            ln_xhat.append(xhat)
            ln_inv_std.append(inv_std)
        else:
            a_in = z
            ln_xhat.append(None)
            ln_inv_std.append(None)
        act_inputs.append(a_in)
        h = np.maximum(a_in, 0.0)
    layer_inputs.append(h)
    u = h @ params.view("w_out") + params.view("b_out")

    tanh_u = None
    if spec.output_transform == "scaled_tanh":
        tanh_u = np.tanh(u)
        y = spec.max_action * tanh_u
    else:
        y = u
    cache = ForwardCache(spec, x, layer_inputs, ln_xhat, ln_inv_std,
                         act_inputs, u, tanh_u)
    return y, cache


def mlp_backward(spec: MlpSpec, params: ParamVector, cache: ForwardCache,
                 upstream: np.ndarray) -> tuple[ParamVector, np.ndarray]:
    """Exact reverse-mode gradients of the recorded forward pass.

    Returns (parameter gradient, gradient w.r.t. the input batch). The cache
    must come from ``mlp_forward`` with the same spec and an unchanged batch.
    """
    if cache.spec != spec:
        raise CacheMismatch("cache was built for a different spec")
    g = np.asarray(upstream, dtype=np.float64)
    n = cache.x.shape[0]
    if g.shape != (n, spec.output_dim):
        raise DimensionMismatch(
            f"upstream has shape {g.shape}, expected ({n}, {spec.output_dim})",
            tensor="upstream")

    grad = ParamVector.zeros(params.layout)
    if spec.output_transform == "scaled_tanh":
        du = g * spec.max_action * (1.0 - cache.tanh_u * cache.tanh_u)
    else:
        du = g

    h_last = cache.layer_inputs[-1]
    grad.view("w_out")[:] = h_last.T @ du
    grad.view("b_out")[:] = du.sum(axis=0)
    dh = du @ params.view("w_out").T

    for i in reversed(range(len(spec.hidden_dims))):
        d_act_in = dh * (cache.act_inputs[i] > 0.0)
        if spec.layernorm_after_hidden:
            dz, dgain, dshift = layernorm_backward(
                d_act_in, cache.ln_xhat[i], cache.ln_inv_std[i],
                params.view(f"ln_gain{i}"))
            grad.view(f"ln_gain{i}")[:] = dgain
            grad.view(f"ln_shift{i}")[:] = dshift
        else:
            dz = d_act_in
        x_i = cache.layer_inputs[i]
        grad.view(f"w{i}")[:] = x_i.T @ dz
        grad.view(f"b{i}")[:] = dz.sum(axis=0)
        dh = dz @ params.view(f"w{i}").T
    return grad, dh


def finite_diff_grad(f: Callable[[ParamVector], float], params: ParamVector,
                     h: float) -> ParamVector:
    """Central-difference gradient estimate of a scalar function of params."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    base = params.values
    out = np.empty_like(base)
    work = base.copy()
    for i in range(base.size):
        work[i] = base[i] + h
        f_plus = float(f(ParamVector(work, params.layout)))
        work[i] = base[i] - h
        f_minus = float(f(ParamVector(work, params.layout)))
        work[i] = base[i]
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError("objective returned a non-finite value",
                                 tensor=params.layout.tensor_at(i))
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return ParamVector(out, params.layout)
