import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.stats import norm

from hetsel import (
    BandwidthPair,
    FitConvergenceError,
    FittedPrior,
    PriorGrid,
    TruePrior,
    build_grid,
    clfdr_from_fit,
    fit_prior,
    fit_prior_by_group,
    fit_weights,
    kernel_marginal,
    kernel_marginals,
    oracle_clfdr,
    silverman_bandwidths,
    simplex_project,
)
from hetsel.deconv import _design_matrix


class TestBuildGrid:
    def test_quantile_convention_two_nodes(self):
        xs = np.arange(101.0)
        grid = build_grid(xs, k=2)
        assert_allclose(grid.nodes, [1.0, 99.0], rtol=0, atol=0)

    def test_default_fifty_nodes(self):
        rng = np.random.default_rng(0)
        xs = rng.normal(size=400)
        grid = build_grid(xs, k=50)
        lo, hi = np.quantile(xs, [0.01, 0.99])
        assert grid.k == 50
        assert_allclose(grid.eta, (hi - lo) / 49)
        assert_allclose(grid.nodes[0], lo)
        assert_allclose(grid.nodes[-1], hi)

    def test_degenerate_support(self):
        with pytest.raises(ValueError):
            build_grid(np.full(10, 3.0), k=5)

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            build_grid(np.arange(10.0), k=1)
        with pytest.raises(ValueError):
            PriorGrid(left=0.0, eta=1.0, k=1)


class TestSilvermanBandwidths:
    def test_hand_value(self):
        # 16 symmetric pairs: m = 32, sample sd exactly 1.34, IQR larger.
        a = 1.34 * math.sqrt(31.0 / 32.0)
        xs = np.array([-a, a] * 16)
        sig = np.linspace(1.0, 2.0, 32)
        bw = silverman_bandwidths(xs, sig)
        assert_allclose(bw.h_x, 0.45, rtol=0, atol=1e-12)

    def test_formula_reference(self):
        rng = np.random.default_rng(7)
        xs = rng.standard_normal(1000)
        sig = rng.uniform(0.5, 2.0, 1000)
        bw = silverman_bandwidths(xs, sig)

        def reference(v):
            spread = min(
                np.std(v, ddof=1), np.quantile(v, 0.75) - np.quantile(v, 0.25)
            )
            return 0.9 * spread / (1.34 * len(v) ** 0.2)

        assert_allclose(bw.h_x, reference(xs), rtol=0, atol=1e-12)
        assert_allclose(bw.h_sigma, reference(sig), rtol=0, atol=1e-12)

    def test_zero_spread_rejected(self):
        xs = np.arange(10.0)
        with pytest.raises(ValueError):
            silverman_bandwidths(xs, np.full(10, 2.0))

    def test_m_too_small(self):
        with pytest.raises(ValueError):
            silverman_bandwidths([1.0], [1.0])


class TestKernelMarginals:
    def test_single_point_self_kernel(self):
        bw = BandwidthPair(h_x=0.7, h_sigma=1.0)
        got = kernel_marginal(0, [2.0], [1.5], bw)
        assert_allclose(got, 1.0 / (math.sqrt(2 * math.pi) * 0.7 * 1.5))

    def test_equal_sigmas_reduce_to_plain_kde(self):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=40)
        sig = np.full(40, 1.3)
        bw = BandwidthPair(h_x=0.4, h_sigma=0.9)
        got = kernel_marginals(xs, sig, bw)
        h = 0.4 * 1.3
        expected = np.array(
            [np.mean(norm.pdf(x0, loc=xs, scale=h)) for x0 in xs]
        )
        assert_allclose(got, expected, rtol=1e-12)

    def test_symmetric_pair_contributes_equally(self):
        bw = BandwidthPair(h_x=0.5, h_sigma=0.8)
        xs = np.array([0.0, -1.2, 1.2])
        sig = np.full(3, 1.0)
        got = kernel_marginal(0, xs, sig, bw)
        self_term = norm.pdf(0.0, scale=0.5)
        side_term = norm.pdf(1.2, scale=0.5)
        assert_allclose(got, (self_term + 2 * side_term) / 3)

    def test_matches_vectorized(self):
        rng = np.random.default_rng(4)
        xs = rng.normal(size=25)
        sig = rng.uniform(0.5, 2.0, 25)
        bw = BandwidthPair(h_x=0.3, h_sigma=0.2)
        full = kernel_marginals(xs, sig, bw, chunk_size=7)
        each = [kernel_marginal(i, xs, sig, bw) for i in range(25)]
        assert_allclose(full, each, rtol=1e-12)
        assert np.all(full > 0)


class TestFitWeights:
    def test_mass_concentration_with_lattice_oracle(self):
        grid = PriorGrid(left=-2.0, eta=1.0, k=5)
        m = 60
        xs = np.zeros(m)
        sig = np.ones(m)
        target = np.full(m, norm.pdf(0.0))
        fit = fit_weights(grid, xs, sig, target)
        assert fit.weights[2] >= 0.9

        # Brute force over the coarse simplex lattice with step 0.1.
        A = _design_matrix(grid, xs, sig)
        best_obj, best_w = np.inf, None
        for i in range(11):
            for j in range(11 - i):
                for k_ in range(11 - i - j):
                    for l_ in range(11 - i - j - k_):
                        w = np.array([i, j, k_, l_, 10 - i - j - k_ - l_]) / 10.0
                        obj = float(np.sum((A @ w - target) ** 2))
                        if obj < best_obj:
                            best_obj, best_w = obj, w
        assert best_w[2] >= 0.9
        assert fit.objective <= best_obj + 1e-12

    def test_beats_uniform_weights(self):
        rng = np.random.default_rng(5)
        xs = rng.normal(size=200)
        sig = rng.uniform(0.5, 2.0, 200)
        bw = silverman_bandwidths(xs, sig)
        grid = build_grid(xs, 20)
        marg = kernel_marginals(xs, sig, bw)
        fit = fit_weights(grid, xs, sig, marg)
        A = _design_matrix(grid, xs, sig)
        uniform = np.full(20, 1 / 20)
        assert fit.objective <= float(np.sum((A @ uniform - marg) ** 2)) + 1e-12

    def test_simplex_feasibility_exact(self):
        rng = np.random.default_rng(6)
        xs = rng.normal(size=150)
        sig = rng.uniform(0.5, 2.0, 150)
        fit = fit_prior(xs, sig, k=15)
        assert np.all(fit.weights >= 0)
        assert abs(fit.weights.sum() - 1.0) <= 1e-9

    def test_objective_history_monotone(self):
        rng = np.random.default_rng(8)
        xs = rng.normal(size=120)
        sig = rng.uniform(0.5, 1.5, 120)
        fit = fit_prior(xs, sig, k=25, keep_history=True)
        hist = np.array(fit.objective_history)
        assert np.all(np.diff(hist) <= 1e-15)

    def test_stationarity_on_well_conditioned_instance(self):
        grid = PriorGrid(left=-2.0, eta=2.0, k=3)
        rng = np.random.default_rng(9)
        xs = rng.normal(size=80)
        sig = np.ones(80)
        marg = kernel_marginals(xs, sig, BandwidthPair(0.5, 1.0))
        # Disable the objective-stagnation exit so the run must reach the
        # stationarity tolerance itself.
        fit = fit_weights(grid, xs, sig, marg, rel_tol=0.0)
        assert fit.pg_residual <= 1e-6

    def test_bad_marginals(self):
        grid = PriorGrid(left=0.0, eta=1.0, k=3)
        with pytest.raises(ValueError):
            fit_weights(grid, [0.0], [1.0], [0.0])
        with pytest.raises(ValueError):
            fit_weights(grid, [0.0, 1.0], [1.0, 1.0], [0.5])

    def test_iteration_cap_raises_with_partial_fit(self):
        rng = np.random.default_rng(10)
        xs = rng.normal(size=500)
        sig = rng.uniform(0.5, 3.0, 500)
        bw = silverman_bandwidths(xs, sig)
        grid = build_grid(xs, 40)
        marg = kernel_marginals(xs, sig, bw)
        with pytest.raises(FitConvergenceError) as err:
            fit_weights(grid, xs, sig, marg, max_iter=3)
        assert err.value.fit.iterations == 3
        assert math.isfinite(err.value.residual)
        assert abs(err.value.fit.weights.sum() - 1.0) <= 1e-9

    def test_simplex_project(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.normal(size=int(rng.integers(1, 12)), scale=3)
            w = simplex_project(v)
            assert np.all(w >= 0)
            assert abs(w.sum() - 1.0) < 1e-12


class TestClfdrFromFit:
    def _fit(self, nodes, weights):
        grid = PriorGrid(left=nodes[0], eta=nodes[1] - nodes[0], k=len(nodes))
        return FittedPrior(grid=grid, weights=np.asarray(weights), objective=0.0, iterations=0)

    def test_all_nodes_null(self):
        fit = self._fit([-3.0, -2.0, -1.0], [0.2, 0.5, 0.3])
        assert clfdr_from_fit(fit, 0.3, 1.0, mu0=0.0) == 1.0

    def test_no_nodes_null(self):
        fit = self._fit([1.0, 2.0, 3.0], [0.2, 0.5, 0.3])
        assert clfdr_from_fit(fit, 0.3, 1.0, mu0=0.0) == 0.0

    def test_symmetric_half(self):
        fit = self._fit([-1.0, 1.0], [0.5, 0.5])
        assert_allclose(clfdr_from_fit(fit, 0.0, 1.0, mu0=0.0), 0.5)

    def test_bounded_random(self):
        rng = np.random.default_rng(12)
        fit = self._fit(np.linspace(-4, 4, 9).tolist(), simplex_project(rng.random(9)))
        vals = clfdr_from_fit(fit, rng.normal(size=100, scale=5), rng.uniform(0.3, 3, 100), mu0=0.4)
        assert np.all((vals >= 0) & (vals <= 1))


class TestOracleClfdr:
    def test_point_mass_symmetry(self):
        prior = TruePrior.point_masses([-1.0, 1.0], [0.5, 0.5])
        assert_allclose(oracle_clfdr(prior, 0.0, 1.0, 0.0), 0.5)

    def test_point_mass_hand_value(self):
        prior = TruePrior.point_masses([-1.0, 1.0], [0.5, 0.5])
        expected = math.exp(-2) / (1 + math.exp(-2))
        assert_allclose(oracle_clfdr(prior, 1.0, 1.0, 0.0), expected, rtol=1e-12)

    def test_uniform_tail_domination(self):
        prior = TruePrior.uniform_mixture([(0.8, -3, -1), (0.2, 1, 2)])
        for x in (6.0, 8.0, 12.0):
            assert oracle_clfdr(prior, x, 1.0, 0.0) < 1e-4

    def test_uniform_against_quadrature(self):
        pieces = [(0.6, -2.0, -0.5), (0.4, 0.5, 2.5)]
        prior = TruePrior.uniform_mixture(pieces)
        mu0, sigma = 0.3, 0.9

        def piecewise_mass(x, upper=None):
            # Integrate each smooth piece separately so quad is accurate.
            total = 0.0
            for w, lo, hi in pieces:
                top = hi if upper is None else min(hi, upper)
                if top <= lo:
                    continue
                val, _ = quad(
                    lambda mu: norm.pdf(x - mu, scale=sigma) * w / (hi - lo), lo, top
                )
                total += val
            return total

        for x in (-1.0, 0.2, 1.7):
            full = piecewise_mass(x)
            null = piecewise_mass(x, upper=mu0)
            assert_allclose(oracle_clfdr(prior, x, sigma, mu0), null / full, rtol=1e-9)

    def test_normal_against_quadrature(self):
        prior = TruePrior.normal_mixture([(0.7, -0.5, 0.4), (0.3, 1.8, 0.6)])
        mu0, sigma = 0.5, 1.1

        def g(mu):
            return 0.7 * norm.pdf(mu, -0.5, 0.4) + 0.3 * norm.pdf(mu, 1.8, 0.6)

        for x in (-1.2, 0.4, 2.5):
            full, _ = quad(lambda mu: norm.pdf(x - mu, scale=sigma) * g(mu), -8, 8, limit=200)
            null, _ = quad(lambda mu: norm.pdf(x - mu, scale=sigma) * g(mu), -8, mu0, limit=200)
            assert_allclose(oracle_clfdr(prior, x, sigma, mu0), null / full, rtol=1e-9)

    def test_matches_fitted_prior_on_point_masses(self):
        locs = [-1.5, -0.5, 0.5, 1.5]
        weights = [0.1, 0.4, 0.3, 0.2]
        prior = TruePrior.point_masses(locs, weights)
        grid = PriorGrid(left=-1.5, eta=1.0, k=4)
        fit = FittedPrior(grid=grid, weights=np.array(weights), objective=0.0, iterations=0)
        rng = np.random.default_rng(13)
        xs = rng.normal(size=50, scale=2)
        sig = rng.uniform(0.4, 2.5, 50)
        assert_allclose(
            oracle_clfdr(prior, xs, sig, 0.2),
            clfdr_from_fit(fit, xs, sig, 0.2),
            rtol=0,
            atol=1e-12,
        )

    def test_bounded_random(self):
        from hetsel import NormalComponent, PointMass, UniformInterval

        rng = np.random.default_rng(14)
        prior = TruePrior(
            (0.25, 0.35, 0.4),
            (PointMass(-1.0), UniformInterval(-0.5, 1.0), NormalComponent(2.0, 0.7)),
        )
        vals = oracle_clfdr(prior, rng.normal(size=200, scale=4), rng.uniform(0.3, 3, 200), 0.1)
        assert np.all((vals >= 0) & (vals <= 1))


class TestFitPriorPipeline:
    def test_constant_sigma_group_is_fit(self):
        rng = np.random.default_rng(15)
        xs = rng.normal(size=100)
        fit = fit_prior(xs, np.ones(100))
        assert fit.bandwidths is not None
        assert fit.bandwidths.h_sigma == 1.0

    def test_grouped_fit(self):
        rng = np.random.default_rng(16)
        xs = rng.normal(size=200)
        sig = np.where(np.arange(200) < 100, 1.0, 2.0)
        groups = (np.arange(200) >= 100).astype(int)
        fits = fit_prior_by_group(xs, sig, groups, k=10)
        assert set(fits) == {0, 1}

    def test_json_round_trip(self):
        rng = np.random.default_rng(17)
        xs = rng.normal(size=100)
        sig = rng.uniform(0.5, 1.5, 100)
        fit = fit_prior(xs, sig, k=12)
        doc = fit.to_json_dict()
        back = FittedPrior.from_json_dict(doc)
        assert_allclose(back.weights, fit.weights)
        assert_allclose(back.grid.nodes, fit.grid.nodes)
        assert back.bandwidths == fit.bandwidths
