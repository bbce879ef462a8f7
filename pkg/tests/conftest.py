import numpy as np
import pytest

from alphascale.nets import MlpSpec, init_params


def random_spec(rng, max_dim=8, layernorm=None, transform=None):
    """Small random architecture for oracle comparisons."""
    input_dim = int(rng.integers(1, max_dim + 1))
    n_hidden = int(rng.integers(1, 4))
    hidden = tuple(int(rng.integers(2, max_dim + 1)) for _ in range(n_hidden))
    output_dim = int(rng.integers(1, max_dim + 1))
    if layernorm is None:
        layernorm = bool(rng.integers(0, 2))
    if transform is None:
        transform = "scaled_tanh" if rng.integers(0, 2) else "identity"
    max_action = float(rng.uniform(0.5, 2.0)) if transform == "scaled_tanh" else None
    return MlpSpec(input_dim, hidden, output_dim, output_transform=transform,
                   max_action=max_action, layernorm_after_hidden=layernorm)


def random_net(rng, **kwargs):
    spec = random_spec(rng, **kwargs)
    params = init_params(spec, rng)
    return spec, params


def max_rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
