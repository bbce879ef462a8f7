"""Offline dataset generation, normalization, batch sampling, and storage.

Quality tiers mirror common offline-RL dataset families:

* ``random`` -- uniform actions
* ``expert`` -- the tuned proportional controller
* ``medium`` -- the controller with Gaussian action noise (sigma 0.3)
* ``replay_mix`` -- 50/50 concatenation of random and medium transitions

File format (``save_dataset``): a magic line, one JSON header line with
``{env_id, source_label, seed, n, state_dim, action_dim}`` (sorted keys),
then raw little-endian arrays in fixed order: state_mean, state_std
(float64), states, actions, rewards, next_states (float64, row-major),
dones (uint8).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .envs import BehaviorPolicySpec, EnvSpec, behavior_action, env_reset, env_step, make_env

STD_FLOOR = 1e-3
MEDIUM_SIGMA = 0.3
_MAGIC = b"OFFLINE-DATASET-V1\n"


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool


@dataclass
class OfflineDataset:
    """Fixed transition store plus the normalization statistics computed from it."""

    env_id: str
    source_label: str
    generator_seed: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    state_mean: np.ndarray
    state_std: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    def transition(self, i: int) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], bool(self.dones[i]))

    def normalize_states(self, s: np.ndarray) -> np.ndarray:
        return (s - self.state_mean) / self.state_std

    def mean_episode_return(self) -> float:
        """Mean undiscounted return per episode; episode ends at done or when
        the next row starts a new rollout (detected via s2 != next s)."""
        totals, current = [], 0.0
        n = len(self)
        for i in range(n):
            current += float(self.rewards[i])
            last = i == n - 1
            broke = self.dones[i] or last or not np.array_equal(self.next_states[i],
                                                                self.states[i + 1])
            if broke:
                totals.append(current)
                current = 0.0
        return float(np.mean(totals))


def _roll_transitions(env: EnvSpec, policy: BehaviorPolicySpec, n: int,
                      rng: np.random.Generator):
    states = np.empty((n, env.state_dim))
    actions = np.empty((n, env.action_dim))
    rewards = np.empty(n)
    next_states = np.empty((n, env.state_dim))
    dones = np.zeros(n, dtype=np.uint8)
    i = 0
    while i < n:
        s = env_reset(env, rng)
        for _ in range(env.horizon):
            a = behavior_action(policy, env, s, rng)
            s2, r, done = env_step(env, s, a)
            states[i], actions[i], rewards[i], next_states[i] = s, a, r, s2
            dones[i] = done
            i += 1
            if done or i == n:
                break
            s = s2
    return states, actions, rewards, next_states, dones


def _with_stats(env_id: str, label: str, seed: int, arrays) -> OfflineDataset:
    states, actions, rewards, next_states, dones = arrays
    mean = states.mean(axis=0)
    std = np.maximum(states.std(axis=0), STD_FLOOR)
    return OfflineDataset(env_id, label, seed, states, actions, rewards,
                          next_states, dones, mean, std)


def generate_dataset(env: EnvSpec, policy: BehaviorPolicySpec, n: int, seed: int,
                     source_label: str = "custom") -> OfflineDataset:
    """Roll full episodes (last one truncated) until exactly n transitions."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    return _with_stats(env.env_id, source_label, seed, _roll_transitions(env, policy, n, rng))


def make_dataset(env: EnvSpec, source: str, n: int, seed: int) -> OfflineDataset:
    """Build one of the shipped quality tiers."""
    if source == "random":
        return generate_dataset(env, BehaviorPolicySpec("uniform_random"), n, seed, source)
    if source == "expert":
        return generate_dataset(env, BehaviorPolicySpec("proportional_controller"),
                                n, seed, source)
    if source == "medium":
        return generate_dataset(
            env, BehaviorPolicySpec("noisy_controller", sigma=MEDIUM_SIGMA), n, seed, source)
    if source == "replay_mix":
        n_random = n // 2
        rng_a = np.random.default_rng(np.random.SeedSequence((seed, 2)))
        rng_b = np.random.default_rng(np.random.SeedSequence((seed, 3)))
        part_a = _roll_transitions(env, BehaviorPolicySpec("uniform_random"), n_random, rng_a)
        part_b = _roll_transitions(
            env, BehaviorPolicySpec("noisy_controller", sigma=MEDIUM_SIGMA),
            n - n_random, rng_b)
        arrays = tuple(np.concatenate([a, b]) for a, b in zip(part_a, part_b))
        return _with_stats(env.env_id, source, seed, arrays)
    raise ValueError(f"unknown dataset source {source!r}")


@dataclass
class TransitionBatch:
    """Minibatch with states already normalized; actions and rewards raw."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.s.shape[0]


def sample_batch(dataset: OfflineDataset, batch_size: int,
                 rng: np.random.Generator) -> TransitionBatch:
    """I.i.d. with-replacement sample; states normalized by the dataset stats."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot sample from an empty dataset")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    idx = rng.integers(0, n, size=batch_size)
    return TransitionBatch(
        s=dataset.normalize_states(dataset.states[idx]),
        a=dataset.actions[idx].copy(),
        r=dataset.rewards[idx].copy(),
        s2=dataset.normalize_states(dataset.next_states[idx]),
        done=dataset.dones[idx].astype(np.float64),
    )


def save_dataset(dataset: OfflineDataset, path: str | Path) -> None:
    path = Path(path)
    header = {
        "action_dim": int(dataset.actions.shape[1]),
        "env_id": dataset.env_id,
        "n": len(dataset),
        "seed": int(dataset.generator_seed),
        "source_label": dataset.source_label,
        "state_dim": int(dataset.states.shape[1]),
    }
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for arr in (dataset.state_mean, dataset.state_std, dataset.states,
                    dataset.actions, dataset.rewards, dataset.next_states):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(dataset.dones, dtype=np.uint8).tobytes())


def load_dataset(path: str | Path) -> OfflineDataset:
    with open(path, "rb") as f:
        if f.readline() != _MAGIC:
            raise ValueError(f"{path} is not a dataset file")
        header = json.loads(f.readline())
        n, sd, ad = header["n"], header["state_dim"], header["action_dim"]

        def read_f8(count, shape):
            return np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape).copy()

        mean = read_f8(sd, (sd,))
        std = read_f8(sd, (sd,))
        states = read_f8(n * sd, (n, sd))
        actions = read_f8(n * ad, (n, ad))
        rewards = read_f8(n, (n,))
        next_states = read_f8(n * sd, (n, sd))
        dones = np.frombuffer(f.read(n), dtype=np.uint8).copy()
    return OfflineDataset(header["env_id"], header["source_label"], header["seed"],
                          states, actions, rewards, next_states, dones, mean, std)
