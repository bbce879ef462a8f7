import numpy as np
import pytest

from alphascale.data import (STD_FLOOR, OfflineDataset, generate_dataset, load_dataset,
                             make_dataset, sample_batch, save_dataset)
from alphascale.envs import BehaviorPolicySpec, make_env


@pytest.fixture(scope="module")
def pointmass():
    return make_env("pointmass1d")


@pytest.fixture(scope="module")
def medium_ds(pointmass):
    return make_dataset(pointmass, "medium", 5000, seed=7)


class TestGeneration:
    def test_exact_count(self, pointmass):
        ds = generate_dataset(pointmass, BehaviorPolicySpec("uniform_random"), 1000, 0)
        assert len(ds) == 1000

    def test_same_seed_identical_bytes(self, tmp_path, pointmass):
        paths = []
        for name in ("a.bin", "b.bin"):
            ds = make_dataset(pointmass, "medium", 800, seed=5)
            p = tmp_path / name
            save_dataset(ds, p)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_quality_ordering(self, pointmass):
        returns = {
            src: make_dataset(pointmass, src, 8000, seed=3).mean_episode_return()
            for src in ("random", "medium", "expert")
        }
        assert returns["random"] < returns["medium"] < returns["expert"]

    def test_replay_mix_concatenates_halves(self, pointmass):
        ds = make_dataset(pointmass, "replay_mix", 4000, seed=1)
        assert len(ds) == 4000
        assert ds.source_label == "replay_mix"
        # first half is uniform-random data: actions fill the range
        first_half = ds.actions[:2000]
        second_half = ds.actions[2000:]
        assert np.std(first_half) > np.std(second_half)

    def test_episodes_respect_horizon(self, pointmass):
        ds = generate_dataset(pointmass, BehaviorPolicySpec("uniform_random"), 350, 0)
        # pointmass never terminates, so with horizon 100 rows 0..99 form one
        # episode: s2 of row i equals s of row i+1 inside an episode.
        assert np.array_equal(ds.next_states[0], ds.states[1])
        assert not np.array_equal(ds.next_states[99], ds.states[100])

    def test_actions_clamped(self, medium_ds, pointmass):
        assert np.all(np.abs(medium_ds.actions) <= pointmass.max_action)

    def test_rewards_finite(self, medium_ds):
        assert np.all(np.isfinite(medium_ds.rewards))

    def test_normalization_stats(self, medium_ds):
        normalized = medium_ds.normalize_states(medium_ds.states)
        assert np.max(np.abs(normalized.mean(axis=0))) < 0.05
        assert np.max(np.abs(normalized.std(axis=0) - 1.0)) < 0.05
        assert np.all(medium_ds.state_std >= STD_FLOOR)


class TestSampling:
    def test_single_row_dataset(self, pointmass):
        ds = generate_dataset(pointmass, BehaviorPolicySpec("uniform_random"), 1, 0)
        batch = sample_batch(ds, 1, np.random.default_rng(0))
        assert np.allclose(batch.s[0], ds.normalize_states(ds.states[0]))
        assert np.array_equal(batch.a[0], ds.actions[0])

    def test_same_rng_same_batch(self, medium_ds):
        b1 = sample_batch(medium_ds, 64, np.random.default_rng(9))
        b2 = sample_batch(medium_ds, 64, np.random.default_rng(9))
        assert np.array_equal(b1.s, b2.s)
        assert np.array_equal(b1.r, b2.r)

    def test_normalized_mean_near_zero(self, medium_ds):
        rng = np.random.default_rng(1)
        total = np.zeros(medium_ds.states.shape[1])
        n_draws = 0
        for _ in range(100):
            batch = sample_batch(medium_ds, 1000, rng)
            total += batch.s.sum(axis=0)
            n_draws += len(batch)
        assert np.max(np.abs(total / n_draws)) < 0.05

    def test_batch_larger_than_dataset_rejected(self, pointmass):
        ds = generate_dataset(pointmass, BehaviorPolicySpec("uniform_random"), 10, 0)
        with pytest.raises(ValueError):
            sample_batch(ds, 11, np.random.default_rng(0))


class TestSerialization:
    def test_roundtrip(self, tmp_path, medium_ds):
        path = tmp_path / "ds.bin"
        save_dataset(medium_ds, path)
        loaded = load_dataset(path)
        assert loaded.env_id == medium_ds.env_id
        assert loaded.source_label == medium_ds.source_label
        assert loaded.generator_seed == medium_ds.generator_seed
        for attr in ("states", "actions", "rewards", "next_states", "dones",
                     "state_mean", "state_std"):
            assert np.array_equal(getattr(loaded, attr), getattr(medium_ds, attr))

    def test_rejects_other_files(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a dataset")
        with pytest.raises(ValueError):
            load_dataset(path)
