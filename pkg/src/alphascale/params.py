"""Flat parameter vectors with named-tensor layouts, Adam, and soft target updates.

Every network in the library stores its weights in one contiguous float64
array so that gradient arithmetic (inner steps, meta-gradient dot products,
finite differences) is plain vector algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatch, NonFiniteError


class Layout:
    """Ordered (name, shape, offset) table describing one flat parameter array."""

    __slots__ = ("entries", "size", "_index")

    def __init__(self, shapes: Sequence[tuple[str, tuple[int, ...]]]):
        entries = []
        index = {}
        offset = 0
        for name, shape in shapes:
            if name in index:
                raise ValueError(f"duplicate tensor name {name!r}")
            shape = tuple(int(d) for d in shape)
            count = 1
            for d in shape:
                count *= d
            index[name] = (shape, offset, count)
            entries.append((name, shape, offset))
            offset += count
        self.entries = tuple(entries)
        self.size = offset
        self._index = index

    def slot(self, name: str) -> tuple[tuple[int, ...], int, int]:
        """(shape, offset, element count) of one tensor."""
        try:
            return self._index[name]
        except KeyError:
            raise DimensionMismatch(f"unknown tensor {name!r}", tensor=name) from None

    def names(self) -> tuple[str, ...]:
        return tuple(e[0] for e in self.entries)

    def tensor_at(self, flat_index: int) -> str:
        """Name of the tensor owning a flat coordinate (for error reporting)."""
        for name, shape, offset in reversed(self.entries):
            if flat_index >= offset:
                return name
        raise IndexError(flat_index)

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        return f"Layout({len(self.entries)} tensors, size={self.size})"


@dataclass
class ParamVector:
    """All weights of one network as a flat float64 array plus its layout."""

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size != self.layout.size:
            raise DimensionMismatch(
                f"parameter array has size {self.values.size}, layout expects {self.layout.size}",
                tensor="values",
            )

    def view(self, name: str) -> np.ndarray:
        """Reshaped view (no copy) of one named tensor."""
        shape, offset, count = self.layout.slot(name)
        return self.values[offset : offset + count].reshape(shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros(self.layout.size), self.layout)

    @staticmethod
    def zeros(layout: Layout) -> "ParamVector":
        return ParamVector(np.zeros(layout.size), layout)

    def __len__(self):
        return self.values.size


def _require_same_layout(a: ParamVector, b: ParamVector, what: str):
    if a.layout is not b.layout and a.layout != b.layout:
        raise DimensionMismatch(f"{what}: layouts differ ({a.layout!r} vs {b.layout!r})")


@dataclass
class AdamState:
    """Adam moment accumulators for one ParamVector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @staticmethod
    def for_params(params: ParamVector, beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> "AdamState":
        n = len(params)
        return AdamState(np.zeros(n), np.zeros(n), 0, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: ParamVector, grad: ParamVector,
              lr: float) -> tuple[ParamVector, AdamState]:
    """One bias-corrected Adam update. Returns the new params and state."""
    _require_same_layout(params, grad, "adam_step")
    if state.first_moment.size != len(params):
        raise DimensionMismatch("adam_step: moment arrays do not match parameter length")
    g = grad.values
    if not np.all(np.isfinite(g)):
        bad = int(np.flatnonzero(~np.isfinite(g))[0])
        raise NonFiniteError("non-finite gradient component",
                             tensor=params.layout.tensor_at(bad))
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_values = params.values - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)
    return ParamVector(new_values, params.layout), new_state


def soft_update(target: ParamVector, online: ParamVector, tau: float) -> ParamVector:
    """Polyak average: (1 - tau) * target + tau * online."""
    _require_same_layout(target, online, "soft_update")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    return ParamVector((1.0 - tau) * target.values + tau * online.values, target.layout)
