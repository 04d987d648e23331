import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pglqr.ctrlmath import solve_dare, spectral_radius
from pglqr.errors import DomainError
from pglqr.lqrmodel import GaussianPolicy, exact_return
from pglqr.pg import (
    batch_grads,
    estimate_moments,
    finite_diff_grad,
    perturb_to_radius,
    reinforce_grad,
    sample_states,
    select_step_size,
    train_reinforce,
)
from pglqr.probgen import ProblemRecipe, random_lqr
from pglqr.rollout import RngKey, Stream, Trajectory, rollout, rollout_batch

from _helpers import scalar_problem


def scalar_at_optimum(horizon, a=0.5, b=1.0, var_s=0.1, var_a=1.0):
    p = scalar_problem(a=a, b=b, sigma_s=var_s, horizon=horizon)
    k = solve_dare(a, b, 1.0, 1.0).k_star
    return p, GaussianPolicy(k, var_a)


class TestReinforceGrad:
    def test_zero_noise_gives_zero(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 4, seed=2))
        traj = rollout(p, pol, np.ones(3), RngKey(0))
        traj = Trajectory(traj.states, traj.actions, np.zeros_like(traj.action_noise), traj.rewards,
                          traj.total_return)
        assert not reinforce_grad(traj, pol).g_hat.any()

    def test_scalar_hand_value(self):
        pol = GaussianPolicy(0.0, 1.0)
        traj = Trajectory(states=np.array([[1.0]]), actions=np.array([[0.5]]), action_noise=np.array([[0.5]]),
                          rewards=np.array([-1.25]), total_return=-1.25)
        assert reinforce_grad(traj, pol).g_hat[0, 0] == pytest.approx(-0.625)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 6), st.integers(0, 1000))
    def test_shape_and_factorization(self, n, m, horizon, seed):
        p, pol = random_lqr(ProblemRecipe(n, m, horizon, seed=seed))
        traj = rollout(p, pol, np.ones(n), RngKey(seed))
        sample = reinforce_grad(traj, pol)
        assert sample.g_hat.shape == (m, n)
        np.testing.assert_allclose(sample.g_hat, sample.score_sum * sample.total_return, rtol=1e-12)
        assert sample.total_return == pytest.approx(traj.rewards.sum(), rel=1e-12)

    def test_batch_matches_single(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 5, seed=6))
        batch = rollout_batch(p, pol, np.ones(3), RngKey(1), 8)
        g, returns = batch_grads(batch, pol)
        for i in range(8):
            np.testing.assert_allclose(g[i], reinforce_grad(batch[i], pol).g_hat, rtol=1e-12)
        np.testing.assert_allclose(returns, batch.total_returns)

    def test_singular_sigma_a(self):
        p, pol = random_lqr(ProblemRecipe(2, 2, 3, seed=0))
        traj = rollout(p, pol, np.ones(2), RngKey(0))
        for sigma_a in (np.diag([1.0, 1e-14]), np.zeros((2, 2))):
            with pytest.raises(DomainError):
                reinforce_grad(traj, pol.replace(sigma_a=sigma_a))


class TestEstimateMoments:
    def test_needs_two_trajectories(self, unit_scalar):
        with pytest.raises(DomainError):
            estimate_moments(*unit_scalar, 1.0, 1, RngKey(0))

    def test_deterministic_for_key(self):
        p, pol = random_lqr(ProblemRecipe(5, 3, 10, seed=1))
        a = estimate_moments(p, pol, np.ones(5), 64, RngKey(3, Stream.MOMENTS))
        b = estimate_moments(p, pol, np.ones(5), 64, RngKey(3, Stream.MOMENTS))
        assert a.nu_hat == b.nu_hat
        assert a.second_moment_hat == b.second_moment_hat
        np.testing.assert_array_equal(a.mean_g, b.mean_g)

    def test_formulas_against_direct_computation(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 4, seed=9))
        key = RngKey(5)
        est = estimate_moments(p, pol, np.ones(3), 40, key)
        g, _ = batch_grads(rollout_batch(p, pol, np.ones(3), key, 40), pol)
        flat = g.reshape(40, -1)
        assert est.nu_hat == pytest.approx(flat.var(axis=0, ddof=1).sum(), rel=1e-10)
        assert est.second_moment_hat == pytest.approx((flat**2).sum(axis=1).mean(), rel=1e-10)
        dev = ((flat - flat.mean(axis=0)) ** 2).sum(axis=1)
        assert est.std_error_nu == pytest.approx(dev.std(ddof=1) / np.sqrt(40), rel=1e-10)

    def test_tiny_action_noise_is_finite(self):
        p = scalar_problem(a=0.5, horizon=5)
        est = estimate_moments(p, GaussianPolicy(-0.2, 1e-12), 1.0, 100, RngKey(0))
        assert np.isfinite(est.nu_hat)
        assert est.nu_hat >= 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 8), st.integers(2, 50), st.integers(0, 10_000))
    def test_uncentered_dominates_centered(self, n, m, horizon, n_traj, seed):
        p, pol = random_lqr(ProblemRecipe(n, m, horizon, seed=seed))
        est = estimate_moments(p, pol, np.ones(n), n_traj, RngKey(seed))
        assert est.nu_hat >= 0 and est.second_moment_hat >= 0
        assert est.second_moment_hat >= est.nu_hat * (n_traj - 1) / n_traj - 1e-9 * (1 + est.nu_hat)

    def test_mean_gradient_vanishes_at_optimum(self):
        p, pol = scalar_at_optimum(horizon=30)
        s1 = 0.5
        est = estimate_moments(p, pol, s1, 100_000, RngKey(21))
        se = np.sqrt(est.nu_hat / est.n_samples)
        # K* is stationary for the infinite horizon only; the finite-horizon
        # gradient stays below the Monte-Carlo resolution here
        assert abs(finite_diff_grad(p, pol, s1, 1e-5)[0, 0]) < se
        assert abs(est.mean_g[0, 0]) <= 3 * se

    def test_second_moment_grows_with_horizon(self):
        values = []
        for horizon in (2, 4, 8, 16):
            p, pol = scalar_at_optimum(horizon)
            values.append(estimate_moments(p, pol, 1.0, 20_000, RngKey(4)).second_moment_hat)
        assert all(b > a for a, b in zip(values, values[1:]))


class TestFiniteDiff:
    def test_flat_at_zero(self, unit_scalar):
        assert finite_diff_grad(*unit_scalar, 1.0, 1e-5)[0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_slope(self, unit_scalar):
        p, pol = unit_scalar
        assert finite_diff_grad(p, pol.replace(k=0.3), 1.0, 1e-5)[0, 0] == pytest.approx(-0.6, abs=1e-6)

    def test_zero_costs(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 4, seed=3))
        p = p.replace(q=np.zeros((3, 3)), r=np.zeros((2, 2)))
        assert not finite_diff_grad(p, pol, np.ones(3), 1e-5).any()

    def test_bad_delta(self, unit_scalar):
        with pytest.raises(DomainError):
            finite_diff_grad(*unit_scalar, 1.0, 0.0)


def test_sample_states_shape_and_scale():
    x = sample_states(4, 20_000, RngKey(0, Stream.INITIAL_STATES))
    assert x.shape == (20_000, 4)
    np.testing.assert_allclose(x.var(axis=0), 0.25, rtol=0.05)


class TestTraining:
    def test_zero_step_keeps_gain(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 5, seed=1))
        curve = train_reinforce(p, pol, 30, 0.0, 1, 10, RngKey(0))
        assert curve.iterations == [0, 10, 20, 30]
        assert len(set(curve.eval_returns)) == 1
        np.testing.assert_array_equal(curve.final_k, pol.k)

    def test_lists_aligned(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 5, seed=1))
        curve = train_reinforce(p, pol, 25, 1e-6, 2, 5, RngKey(0), keep_snapshots=True)
        n = len(curve.iterations)
        assert n == len(curve.eval_returns) == len(curve.eval_stds) == len(curve.train_returns)
        assert len(curve.k_snapshots) == n
        assert all(b > a for a, b in zip(curve.iterations, curve.iterations[1:]))

    def test_stays_near_optimum(self):
        p, pol = scalar_at_optimum(horizon=10)
        curve = train_reinforce(p, pol, 100, 1e-4, 1, 10, RngKey(2))
        start = curve.eval_returns[0]
        assert not curve.diverged
        assert all(abs(v - start) <= 0.01 * abs(start) for v in curve.eval_returns)

    def test_deterministic(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 5, seed=4))
        a = train_reinforce(p, pol, 40, 1e-5, 2, 10, RngKey(9))
        b = train_reinforce(p, pol, 40, 1e-5, 2, 10, RngKey(9))
        assert a.eval_returns == b.eval_returns
        np.testing.assert_array_equal(a.final_k, b.final_k)

    def test_divergence_truncates(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 10, seed=4))
        curve = train_reinforce(p, pol, 200, 1e3, 1, 10, RngKey(1))
        assert curve.diverged
        assert curve.iterations[-1] < 200

    def test_argument_checks(self, unit_scalar):
        with pytest.raises(DomainError):
            train_reinforce(*unit_scalar, 0, 1e-3, 1, 1, RngKey(0))
        with pytest.raises(DomainError):
            train_reinforce(*unit_scalar, 5, -1.0, 1, 1, RngKey(0))

    def test_select_step_size_prefers_stable(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 10, seed=4))
        step = select_step_size([(p, pol)], 30, 1, 10, RngKey(0), candidates=(1e3, 1e-6))
        assert step == 1e-6


class TestPerturb:
    def test_hits_target(self):
        for seed in range(20):
            p, pol = random_lqr(ProblemRecipe(5, 3, 10, seed=seed))
            k = perturb_to_radius(p, pol.k, 0.98, RngKey(seed, Stream.PERTURB))
            assert abs(spectral_radius(p.a + p.b @ k) - 0.98) <= 1e-4

    def test_degenerate_target(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 10, seed=1))
        base = spectral_radius(p.a + p.b @ pol.k)
        k = perturb_to_radius(p, pol.k, base + 1e-6, RngKey(0))
        np.testing.assert_array_equal(k, pol.k)

    def test_deterministic(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 10, seed=1))
        np.testing.assert_array_equal(perturb_to_radius(p, pol.k, 0.9, RngKey(3)),
                                      perturb_to_radius(p, pol.k, 0.9, RngKey(3)))

    def test_rejects_target_below_base(self):
        p, pol = random_lqr(ProblemRecipe(3, 2, 10, seed=1))
        base = spectral_radius(p.a + p.b @ pol.k)
        with pytest.raises(DomainError):
            perturb_to_radius(p, pol.k, base / 2, RngKey(0))
        with pytest.raises(DomainError):
            perturb_to_radius(p, pol.k, 1.0, RngKey(0))


def test_exact_return_is_maximized_near_optimal_gain_for_long_horizon():
    p, pol = scalar_at_optimum(horizon=200)
    j0 = exact_return(p, pol, 1.0)
    for d in (-0.01, 0.01):
        assert exact_return(p, pol.replace(k=pol.k + d), 1.0) < j0
