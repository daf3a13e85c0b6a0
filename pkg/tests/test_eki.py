import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparseki.dictionary import (
    ModelParameterization,
    build_coalescence_parameterization,
)
from sparseki.eki import (
    ConvergenceReport,
    EkiConfig,
    Ensemble,
    eki_update,
    prune_and_refit,
    restrict_parameterization,
    run_sparse_eki,
    run_standard_eki,
    sparse_member_step,
    threshold,
    _augmented_covariance,
)
from sparseki.observables import NoiseCovariance
from sparseki.simulate import BlowUpError


def toy_param(p, mask=None, A=None, a=None, budget=np.inf, lam=0.0):
    mask = np.ones(p, dtype=bool) if mask is None else np.asarray(mask, bool)
    A = np.zeros((0, p)) if A is None else np.asarray(A, float)
    a = np.zeros(A.shape[0]) if a is None else np.asarray(a, float)
    return ModelParameterization(
        name="toy",
        state_dim=p,
        free_dim=p,
        labels=tuple(f"v{i}" for i in range(p)),
        sparsity_mask=mask,
        ineq_matrix=A,
        ineq_bound=a,
        l1_budget=budget,
        threshold_level=lam,
        embed_fn=lambda v: np.asarray(v, float)[..., None, :],
        project_fn=lambda t: np.asarray(t, float)[..., 0, :],
    )


def cfg_for(p, **kw):
    defaults = dict(
        ensemble_size=kw.pop("ensemble_size", 10),
        prior_lo=-np.ones(p),
        prior_hi=np.ones(p),
        jitter=kw.pop("jitter", 1e-6),
        seed=kw.pop("seed", 0),
    )
    defaults.update(kw)
    return EkiConfig(**defaults)


class TestEkiUpdate:
    def test_identical_G_is_fixed_point(self):
        members = np.array([[0.0, 1.0], [2.0, -1.0], [1.0, 0.5]])
        G = np.tile([3.0, 1.0], (3, 1))
        cfg = EkiConfig(ensemble_size=3, perturb_observations=False, jitter=0.0)
        out = eki_update(Ensemble(members), G, np.array([4.0, 0.0]),
                         np.eye(2), cfg)
        np.testing.assert_array_equal(out.members, members)

    def test_two_member_hand_computation(self):
        # members {0, 2}, G = identity, y = 4 fixed, Gamma = 1:
        # C_thG = C_GG = 2 (unbiased), updates 0 -> 8/3 and 2 -> 10/3
        members = np.array([[0.0], [2.0]])
        cfg = EkiConfig(ensemble_size=2, perturb_observations=False, jitter=0.0)
        out = eki_update(Ensemble(members), members.copy(), np.array([4.0]),
                         np.array([[1.0]]), cfg)
        np.testing.assert_allclose(
            out.members[:, 0], [8.0 / 3.0, 10.0 / 3.0], atol=1e-12
        )

    def test_linear_gaussian_matches_kalman_oracle(self):
        rng = np.random.default_rng(0)
        p, d, J = 3, 4, 10_000
        A = rng.normal(size=(d, p))
        m0 = np.array([1.0, -0.5, 2.0])
        C0 = np.diag([1.0, 2.0, 0.5])
        gamma = 0.5 * np.eye(d)
        theta_true = np.array([0.3, 1.2, -0.7])
        y = A @ theta_true

        members = m0 + rng.standard_normal((J, p)) @ np.sqrt(C0)
        G = members @ A.T
        cfg = EkiConfig(ensemble_size=J, perturb_observations=True, jitter=0.0,
                        seed=1)
        out = eki_update(Ensemble(members), G, y, gamma, cfg)

        K = C0 @ A.T @ np.linalg.inv(A @ C0 @ A.T + gamma)
        kalman_mean = m0 + K @ (y - A @ m0)
        np.testing.assert_allclose(
            out.members.mean(axis=0), kalman_mean,
            atol=0.05 * np.max(np.abs(kalman_mean)),
        )

    def test_too_few_members(self):
        cfg = EkiConfig(ensemble_size=2)
        with pytest.raises(ValueError):
            eki_update(Ensemble(np.array([[1.0]])), np.array([[1.0]]),
                       np.array([1.0]), np.eye(1), cfg)


class TestThreshold:
    def test_paper_level(self):
        mask = np.ones(2, dtype=bool)
        out = threshold(np.array([0.2, 0.5]), 0.1, mask)
        np.testing.assert_array_equal(out, [0.0, 0.5])

    def test_zero_lambda_is_identity(self):
        v = np.array([1e-12, -5.0, 0.3])
        np.testing.assert_array_equal(threshold(v, 0.0, np.ones(3, bool)), v)

    def test_unmasked_untouched(self):
        out = threshold(np.array([0.01, 0.01]), 0.1,
                        np.array([True, False]))
        np.testing.assert_array_equal(out, [0.0, 0.01])

    @given(
        st.lists(st.floats(-10, 10), min_size=1, max_size=8),
        st.floats(0, 2.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_idempotence(self, values, lam):
        v = np.asarray(values)
        mask = np.ones(len(v), dtype=bool)
        once = threshold(v, lam, mask)
        twice = threshold(once, lam, mask)
        np.testing.assert_array_equal(once, twice)


def nonlinear_G(thetas):
    # mildly nonlinear map so the augmented covariance has full rank
    thetas = np.atleast_2d(thetas)
    a = thetas[:, 0] + 0.05 * thetas[:, 1] ** 2
    b = thetas[:, 1] - thetas[:, 2] + 0.05 * thetas[:, 0] * thetas[:, 2]
    return np.stack([a, b], axis=1)


class TestSparseMemberStep:
    def make_inputs(self, jitter):
        rng = np.random.default_rng(2)
        members = rng.normal(size=(40, 3))
        G = nonlinear_G(members)
        C = _augmented_covariance(members, G, jitter)
        gamma = NoiseCovariance(0.1 * np.eye(2))
        y_j = np.array([0.5, -0.2])
        return members, G, C, gamma, y_j

    def test_unconstrained_matches_closed_form(self):
        members, G, C, gamma, y_j = self.make_inputs(jitter=0.0)
        param = toy_param(3, budget=np.inf)
        cfg = EkiConfig(ensemble_size=40, jitter=0.0, gamma=np.inf)
        p = 3
        for j in (0, 5, 17):
            theta_qp = sparse_member_step(
                members[j], G[j], y_j, gamma, C, param, cfg
            )
            gain = np.linalg.solve(C[p:, p:] + gamma.matrix, y_j - G[j])
            theta_cf = members[j] + C[:p, p:] @ gain
            np.testing.assert_allclose(theta_qp, theta_cf, atol=1e-6)

    def test_unconstrained_matches_closed_form_with_jitter(self):
        members, G, C, gamma, y_j = self.make_inputs(jitter=1e-6)
        param = toy_param(3, budget=np.inf)
        cfg = EkiConfig(ensemble_size=40, jitter=1e-6, gamma=np.inf)
        p = 3
        theta_qp = sparse_member_step(members[0], G[0], y_j, gamma, C, param, cfg)
        gain = np.linalg.solve(C[p:, p:] + gamma.matrix, y_j - G[0])
        theta_cf = members[0] + C[:p, p:] @ gain
        np.testing.assert_allclose(theta_qp, theta_cf, atol=1e-6)

    def test_budget_always_satisfied(self):
        members, G, C, gamma, y_j = self.make_inputs(jitter=1e-6)
        param = toy_param(3, budget=0.8)
        cfg = EkiConfig(ensemble_size=40, jitter=1e-6)
        for j in range(10):
            theta = sparse_member_step(members[j], G[j], y_j, gamma, C, param, cfg)
            assert np.abs(theta).sum() <= 0.8 + 1e-8

    def test_positivity_rows_respected(self):
        rng = np.random.default_rng(3)
        param = build_coalescence_parameterization()
        members = rng.uniform(0, 2, size=(30, 9))
        A = rng.normal(size=(5, 9))
        G = members @ A.T + 0.02 * members**2 @ np.abs(A.T)
        C = _augmented_covariance(members, G, 1e-6)
        gamma = NoiseCovariance(0.05 * np.eye(5))
        y_j = G[0] + 0.3
        cfg = EkiConfig(ensemble_size=30, jitter=1e-6)
        for j in range(8):
            theta = sparse_member_step(members[j], G[j], y_j, gamma, C, param, cfg)
            assert np.all(theta >= -1e-10)
            assert np.abs(theta).sum() <= param.l1_budget + 1e-8


class LinearForward:
    def __init__(self, A):
        self.A = np.asarray(A, float)

    def __call__(self, theta, rng=None):
        return self.A @ theta

    def batch(self, thetas, rng=None):
        return np.atleast_2d(thetas) @ self.A.T


class TestRunSparseEki:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.p, self.d = 4, 3
        self.A = rng.normal(size=(self.d, self.p))
        self.forward = LinearForward(self.A)
        self.theta_true = np.array([1.0, 0.0, -0.5, 0.0])
        self.y = self.A @ self.theta_true
        self.gamma = NoiseCovariance(0.01 * np.eye(self.d))

    def test_reduction_to_standard(self):
        # infinite budget, zero threshold, no inequalities: the sparse path
        # tracks the plain Kalman iteration to solver tolerance (single
        # update), with bounded drift as solver error compounds
        param = toy_param(self.p, budget=np.inf, lam=0.0)
        one = cfg_for(self.p, ensemble_size=12, max_iterations=1,
                      discrepancy_stop=False, seed=7, qp_tol=1e-12)
        s1, _ = run_sparse_eki(self.forward, self.y, self.gamma, param, one,
                               forward_batch=self.forward.batch)
        e1, _ = run_standard_eki(self.forward, self.y, self.gamma, param, one,
                                 forward_batch=self.forward.batch)
        np.testing.assert_allclose(s1.members, e1.members, atol=1e-6)

        four = cfg_for(self.p, ensemble_size=12, max_iterations=4,
                       discrepancy_stop=False, seed=7)
        s4, _ = run_sparse_eki(self.forward, self.y, self.gamma, param, four,
                               forward_batch=self.forward.batch)
        e4, _ = run_standard_eki(self.forward, self.y, self.gamma, param, four,
                                 forward_batch=self.forward.batch)
        np.testing.assert_allclose(s4.members, e4.members, atol=1e-4)

    def test_subspace_preservation(self):
        # standard EKI with J < p: members stay in the initial affine span
        p = 10
        rng = np.random.default_rng(5)
        A = rng.normal(size=(3, p))
        forward = LinearForward(A)
        y = A @ rng.normal(size=p)
        param = toy_param(p)
        cfg = cfg_for(p, ensemble_size=6, max_iterations=5,
                      discrepancy_stop=False, seed=8)
        out, _ = run_standard_eki(forward, y, NoiseCovariance(0.1 * np.eye(3)),
                                  param, cfg, forward_batch=forward.batch)

        init_rng = np.random.default_rng(np.random.SeedSequence((8, 0)))
        init = -1 + 2 * init_rng.uniform(size=(6, p))
        centered = init - init.mean(axis=0)
        basis = np.linalg.svd(centered, full_matrices=False)[2]
        rank = np.linalg.matrix_rank(centered, tol=1e-10)
        basis = basis[:rank]
        for m in out.members:
            v = m - init.mean(axis=0)
            residual = v - basis.T @ (basis @ v)
            assert np.linalg.norm(residual) <= 1e-8 * max(1, np.linalg.norm(v))

    def test_history_recorded_and_finite(self):
        param = toy_param(self.p, budget=3.0, lam=0.005)
        cfg = cfg_for(self.p, ensemble_size=12, max_iterations=5, seed=9)
        out, report = run_sparse_eki(self.forward, self.y, self.gamma, param,
                                     cfg, forward_batch=self.forward.batch)
        assert len(report.history) >= 2
        for rec in report.history:
            assert np.isfinite(rec.misfit)
            assert np.isfinite(rec.masked_l1)
        assert report.max_budget_violation <= 1e-8
        text = report.to_json()
        assert "masked_l1" in text

    def test_determinism(self):
        param = toy_param(self.p, budget=3.0, lam=0.005)
        cfg = cfg_for(self.p, ensemble_size=10, max_iterations=4, seed=11)
        a, ra = run_sparse_eki(self.forward, self.y, self.gamma, param, cfg,
                               forward_batch=self.forward.batch)
        b, rb = run_sparse_eki(self.forward, self.y, self.gamma, param, cfg,
                               forward_batch=self.forward.batch)
        np.testing.assert_array_equal(a.members, b.members)
        assert ra.to_json() == rb.to_json()

    def test_feasibility_preserved_every_iteration(self):
        A_ineq = np.zeros((1, self.p))
        A_ineq[0, 0] = 1.0
        param = toy_param(self.p, A=A_ineq, a=[0.0], budget=2.5, lam=0.01)
        cfg = cfg_for(self.p, ensemble_size=14, max_iterations=6, seed=12)
        out, report = run_sparse_eki(self.forward, self.y, self.gamma, param,
                                     cfg, forward_batch=self.forward.batch)
        assert report.max_budget_violation <= 1e-8
        assert report.max_ineq_violation <= 1e-8
        assert np.all(out.members[:, 0] >= -1e-8)

    def test_blowup_resampling(self):
        calls = {"n": 0}

        def fragile(theta, rng=None):
            calls["n"] += 1
            # fails away from the solution path (truth has theta[3] = 0)
            if theta[3] > 0.2:
                raise BlowUpError(1.0)
            return self.A @ theta

        param = toy_param(self.p)
        cfg = cfg_for(self.p, ensemble_size=8, max_iterations=2, seed=13,
                      discrepancy_stop=False)
        out, report = run_sparse_eki(fragile, self.y, self.gamma, param, cfg)
        assert report.n_resampled > 0
        assert out.size == 8

    def test_qp_fallback_counted(self, monkeypatch):
        import sparseki.eki as eki_mod
        from sparseki.qp import QpMaxIterationsError, QpSolution, KktResiduals

        def always_fails(*args, **kwargs):
            best = QpSolution(np.zeros(1), np.zeros(0),
                              KktResiduals(1.0, 1.0, 1.0), 100, 0.0)
            raise QpMaxIterationsError(best)

        monkeypatch.setattr(eki_mod, "sparse_member_step", always_fails)
        param = toy_param(self.p, budget=2.0)
        cfg = cfg_for(self.p, ensemble_size=6, max_iterations=2, seed=14,
                      discrepancy_stop=False)
        out, report = run_sparse_eki(self.forward, self.y, self.gamma, param,
                                     cfg, forward_batch=self.forward.batch)
        # every member of every iteration used the closed-form fallback
        assert report.n_qp_fallbacks == 12
        assert np.all(np.abs(out.members[:, 0]).sum(axis=0) >= 0)  # finite run

    def test_sparse_recovery_on_linear_problem(self):
        rng = np.random.default_rng(15)
        p, d = 6, 10
        A = rng.normal(size=(d, p))
        theta_true = np.array([1.5, 0.0, 0.0, 1.2, 0.0, 0.0])
        forward = LinearForward(A)
        y = A @ theta_true
        gamma = NoiseCovariance(1e-4 * np.eye(d))
        param = toy_param(p, budget=5.0, lam=0.02)
        cfg = EkiConfig(ensemble_size=40, max_iterations=25, seed=16,
                        prior_lo=-2 * np.ones(p), prior_hi=2 * np.ones(p))
        out, report = run_sparse_eki(forward, y, gamma, param, cfg,
                                     forward_batch=forward.batch)
        mean = out.mean
        assert abs(mean[0] - 1.5) < 0.15
        assert abs(mean[3] - 1.2) < 0.15
        assert np.abs(mean[[1, 2, 4, 5]]).sum() < 0.3


class TestPruneAndRefit:
    def setup_method(self):
        rng = np.random.default_rng(17)
        self.p, self.d = 6, 10
        self.A = rng.normal(size=(self.d, self.p))
        self.theta_true = np.array([1.5, 0.0, 0.0, 1.2, 0.0, 0.0])
        self.forward = LinearForward(self.A)
        self.y = self.A @ self.theta_true
        self.gamma = NoiseCovariance(1e-4 * np.eye(self.d))
        self.param = toy_param(self.p, budget=5.0, lam=0.02)
        self.cfg = EkiConfig(ensemble_size=40, max_iterations=20, seed=18,
                             prior_lo=-2 * np.ones(self.p),
                             prior_hi=2 * np.ones(self.p))

    def test_prune_recovers_support_and_is_stable(self):
        first, report = run_sparse_eki(self.forward, self.y, self.gamma,
                                       self.param, self.cfg,
                                       forward_batch=self.forward.batch)
        result = prune_and_refit(first, self.param, self.forward, self.y,
                                 self.gamma, self.cfg,
                                 forward_batch=self.forward.batch,
                                 first_report=report)
        assert set(result.keep_indices) == {0, 3}
        assert abs(result.full_mean[0] - 1.5) < 0.1
        assert abs(result.full_mean[3] - 1.2) < 0.1
        np.testing.assert_array_equal(result.full_mean[[1, 2, 4, 5]], 0.0)

    def test_survivor_count_non_increasing(self):
        first, _ = run_sparse_eki(self.forward, self.y, self.gamma, self.param,
                                  self.cfg, forward_batch=self.forward.batch)
        result = prune_and_refit(first, self.param, self.forward, self.y,
                                 self.gamma, self.cfg,
                                 forward_batch=self.forward.batch)
        # keep set shrinks (or stays) across batches by construction
        assert len(result.keep_indices) <= self.p

    def test_truth_support_is_fixed_point(self):
        # an ensemble already concentrated on the true support stays there
        rng = np.random.default_rng(19)
        members = np.tile(self.theta_true, (20, 1))
        members[:, [0, 3]] += 0.02 * rng.standard_normal((20, 2))
        ens = Ensemble(members)
        result = prune_and_refit(ens, self.param, self.forward, self.y,
                                 self.gamma,
                                 EkiConfig(ensemble_size=20, max_iterations=8,
                                           seed=20,
                                           prior_lo=-2 * np.ones(self.p),
                                           prior_hi=2 * np.ones(self.p)),
                                 forward_batch=self.forward.batch)
        assert set(result.keep_indices) == {0, 3}

    def test_empty_survivors_raises(self):
        ens = Ensemble(np.full((10, self.p), 1e-6))
        with pytest.raises(ValueError):
            prune_and_refit(ens, self.param, self.forward, self.y, self.gamma,
                            self.cfg, forward_batch=self.forward.batch)


class TestRestrictParameterization:
    def test_round_trip_and_masks(self):
        param = build_coalescence_parameterization()
        reduced, inject = restrict_parameterization(param, np.array([0, 4]))
        assert reduced.free_dim == 2
        assert reduced.labels == ("c[0,0]", "c[1,2]")
        v = np.array([1.0, 2.0])
        full = inject(v)
        assert full[0] == 1.0 and full[4] == 2.0 and np.sum(full != 0) == 2
        theta = reduced.embed(v)
        assert theta[0, 0] == 1.0 and theta[1, 2] == 2.0

    def test_positive_bound_coordinate_protected(self):
        from sparseki.dictionary import build_ks_library

        param = build_ks_library()
        with pytest.raises(ValueError):
            restrict_parameterization(param, np.array([0, 1]))  # drops alpha4
