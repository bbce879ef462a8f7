import numpy as np
import pytest

from alphascale.bounds import (LipschitzCritic, measure_update_quantities,
                               prop1_bounds, run_theory_probes, single_step_bound,
                               supnorm_lemma_check, taylor_l3_check)


def affine_policy(m, d):
    m = np.asarray(m, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return lambda states: states @ m.T + d


class TestLipschitzCritic:
    def test_exact_action_lipschitz_constant(self, rng):
        critic = LipschitzCritic.create(3, 2, scale=1.7, rng=rng)
        states = rng.normal(size=(50, 3))
        a1 = rng.normal(size=(50, 2))
        a2 = rng.normal(size=(50, 2))
        lhs = np.abs(critic.value(states, a1) - critic.value(states, a2))
        rhs = 1.7 * np.linalg.norm(a1 - a2, axis=1)
        assert np.all(lhs <= rhs + 1e-12)
        # equality when the action difference aligns with the direction
        a3 = a1 + 0.9 * critic.direction
        lhs_aligned = np.abs(critic.value(states, a3) - critic.value(states, a1))
        assert np.allclose(lhs_aligned, 1.7 * 0.9)

    def test_offset_depends_only_on_state(self, rng):
        critic = LipschitzCritic.create(2, 2, scale=1.0, rng=rng)
        states = rng.normal(size=(10, 2))
        zeros = np.zeros((10, 2))
        offset = critic.value(states, zeros)
        assert np.all(np.abs(offset) <= np.sum(np.abs(critic.feat_out)) + 1e-12)


class TestProp1:
    def test_zero_delta_q(self):
        report = prop1_bounds(c=0.5, delta_q=0.0, delta_l_bc=0.3, l_q=1.0)
        assert report.lower_bound_holds and report.upper_bound_holds
        assert report.slack_lower == pytest.approx(0.3)  # lower bound is 0

    def test_zero_delta_l_bc_upper_reads_4c2(self):
        l_q, c = 2.0, 0.7
        report = prop1_bounds(c=c, delta_q=0.1, delta_l_bc=0.0, l_q=l_q)
        assert report.slack_upper == pytest.approx(l_q**2 * 4 * c**2 - 0.1**2)

    def test_thousand_random_instances_hold(self):
        # Brute-force oracle: direct expectations over explicit state samples
        # with exactly-Lipschitz critics. Sampled in the value-ascent regime
        # (update and behavior gap along the critic direction) where both
        # inequalities are exact theorems, so one violation is a failure.
        from alphascale.bounds import gradient_step_instance
        rng = np.random.default_rng(77)
        for _ in range(1000):
            sdim = int(rng.integers(1, 5))
            adim = int(rng.integers(1, 5))
            states = rng.uniform(-1, 1, (256, sdim))
            pi_old, pi_new, beta, critic = gradient_step_instance(sdim, adim, rng)
            c, dq, dl = measure_update_quantities(pi_old, pi_new, beta, critic, states)
            report = prop1_bounds(c, dq, dl, critic.scale)
            assert report.lower_bound_holds, (c, dq, dl)
            assert report.upper_bound_holds, (c, dq, dl)

    def test_upper_bound_holds_for_independent_pairs(self):
        # The upper bound does not need the alignment: any policy pair works.
        rng = np.random.default_rng(78)
        for _ in range(1000):
            sdim = int(rng.integers(1, 5))
            adim = int(rng.integers(1, 5))
            states = rng.uniform(-1, 1, (256, sdim))
            critic = LipschitzCritic.create(sdim, adim, float(rng.uniform(0.2, 4.0)), rng)
            pi_old = affine_policy(rng.normal(size=(adim, sdim)), rng.normal(size=adim))
            pi_new = affine_policy(rng.normal(size=(adim, sdim)), rng.normal(size=adim))
            beta = affine_policy(rng.normal(size=(adim, sdim)), rng.normal(size=adim))
            c, dq, dl = measure_update_quantities(pi_old, pi_new, beta, critic, states)
            assert prop1_bounds(c, dq, dl, critic.scale).upper_bound_holds

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            prop1_bounds(c=-1.0, delta_q=0.0, delta_l_bc=0.0, l_q=1.0)
        with pytest.raises(ValueError):
            prop1_bounds(c=1.0, delta_q=0.0, delta_l_bc=0.0, l_q=0.0)


class TestSingleStepBound:
    def test_zero_kappa(self):
        assert single_step_bound(0.42, 1.0, 1.0, 0.0, 0.99) == pytest.approx(42.0)

    def test_zero_bc_jump_collapses_bracket(self):
        dq, c2, kappa, gamma = 0.3, 0.25, 1.5, 0.9
        expected = (dq - 6 * kappa * c2) / (1 - gamma)
        assert single_step_bound(dq, c2, 0.0, kappa, gamma) == pytest.approx(expected)

    def test_matches_independent_rederivation(self, rng):
        # Duplicate-formula oracle assembled in a different order.
        for _ in range(100):
            dq = float(rng.normal())
            c2 = float(rng.uniform(0, 3))
            dl = float(rng.uniform(0, 3))
            kappa = float(rng.uniform(0, 2))
            gamma = float(rng.uniform(0, 0.99))
            c = np.sqrt(c2)
            bracket = dl + 3.0 * (c2 + c * np.sqrt(c2 + dl))
            expected = (dq - kappa * bracket) * (1.0 / (1.0 - gamma))
            got = single_step_bound(dq, c2, dl, kappa, gamma)
            assert abs(got - expected) <= 1e-12 * max(1.0, abs(expected))

    def test_monotonicity_grid(self):
        kappas = [0.0, 0.5, 1.0, 2.0]
        c2s = [0.0, 0.5, 1.0, 2.0]
        dls = [0.0, 0.5, 1.0]
        dqs = [-1.0, 0.0, 1.0]
        for c2 in c2s:
            for dl in dls:
                for dq in dqs:
                    vals = [single_step_bound(dq, c2, dl, k, 0.9) for k in kappas]
                    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
        for k in kappas:
            for dl in dls:
                for dq in dqs:
                    vals = [single_step_bound(dq, c2, dl, k, 0.9) for c2 in c2s]
                    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
            for c2 in c2s:
                for dq in dqs:
                    vals = [single_step_bound(dq, c2, dl, k, 0.9) for dl in dls]
                    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))
                for dl in dls:
                    vals = [single_step_bound(dq, c2, dl, k, 0.9) for dq in dqs]
                    assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))


class TestSupnormLemma:
    def test_unchanged_policy(self, rng):
        pi = affine_policy(rng.normal(size=(2, 3)), rng.normal(size=2))
        beta = affine_policy(rng.normal(size=(2, 3)), rng.normal(size=2))
        states = rng.normal(size=(32, 3))
        assert supnorm_lemma_check(pi, pi, beta, states)

    def test_single_state_tight_case(self):
        # One state, pi_new == behavior: every sup is attained at that state
        # and the inequality holds with slack 0.
        states = np.array([[0.5]])
        pi_old = affine_policy([[0.0]], [1.0])
        beta = affine_policy([[0.0]], [-1.0])
        x_inf = 4.0  # ||pi_new - pi_old||^2 = ||beta - pi_old||^2
        c_inf_sq = 4.0
        delta = 4.0  # |0 - 4|
        rhs = (np.sqrt(c_inf_sq) + np.sqrt(c_inf_sq + delta)) ** 2
        assert supnorm_lemma_check(pi_old, beta, beta, states)
        assert x_inf <= rhs
        # slack 0 requires delta = 0: same policy twice
        assert supnorm_lemma_check(pi_old, pi_old, beta, states)

    def test_thousand_random_triples(self, rng):
        for _ in range(1000):
            sdim = int(rng.integers(1, 4))
            adim = int(rng.integers(1, 4))
            states = rng.uniform(-1, 1, (64, sdim))
            pis = [affine_policy(rng.normal(size=(adim, sdim)), rng.normal(size=adim))
                   for _ in range(3)]
            assert supnorm_lemma_check(pis[0], pis[1], pis[2], states)


class TestTaylorL3:
    def test_zero_jump_is_exact(self):
        check = taylor_l3_check(1.0, 0.0, kappa=2.0)
        assert check.exact_minus_const == pytest.approx(0.0, abs=1e-12)
        assert check.linearized == 0.0
        assert check.rel_err == pytest.approx(0.0)

    def test_small_ratio_under_one_percent(self):
        check = taylor_l3_check(1.0, 1e-3, kappa=1.0)
        assert check.rel_err < 0.01

    def test_regime_boundary_documented(self):
        check = taylor_l3_check(1.0, 0.1, kappa=1.0)
        assert check.rel_err < 0.15

    def test_rel_err_monotone_in_ratio(self):
        errs = [taylor_l3_check(1.0, r, kappa=1.3).rel_err
                for r in (1e-2, 1e-3, 1e-4)]
        assert errs[0] > errs[1] > errs[2]

    def test_scale_invariance_in_c(self):
        # same ratio, different c: relative error must agree
        a = taylor_l3_check(1.0, 1e-3, kappa=1.0)
        b = taylor_l3_check(4.0, 4e-3, kappa=1.0)
        assert a.rel_err == pytest.approx(b.rel_err, rel=1e-9)

    def test_precondition_enforced(self):
        with pytest.raises(ValueError):
            taylor_l3_check(1.0, 0.2, kappa=1.0)


class TestProbeReport:
    def test_report_structure_and_zero_violations(self, tmp_path):
        report = run_theory_probes(seed=5, prop1_instances=50, supnorm_instances=50)
        assert report["prop1"]["violations"] == 0
        assert report["supnorm_lemma"]["violations"] == 0
        assert report["prop1"]["min_slack_lower"] >= -1e-9
        assert set(report["taylor_l3"]) == {"1e-02", "1e-03", "1e-04"}
        from alphascale.bounds import write_probe_report
        out = tmp_path / "probe.json"
        write_probe_report(report, out)
        import json
        assert json.loads(out.read_text())["prop1"]["instances"] == 50
