import dataclasses

import numpy as np
import pytest
from scipy.integrate import trapezoid

from funreg.basis import Interval, eval_basis, gram, make_equispaced_basis
from funreg.errors import DomainError, RankDeficientError
from funreg.sflm import SflmSpec, _SflmProblem, draw_multipliers, fit_sflm, predict_sflm, wild_bootstrap_band
from funreg.smoother import FunctionalDatum
from funreg.trend import TrendSpec

from oracles import piece_edges, trapezoid_curve_product

DAY = Interval(0.0, 24.0)
XB = make_equispaced_basis("bspline", 4, 6, DAY)


def exposures(n, seed=0, basis=XB):
    rng = np.random.default_rng(seed)
    C = 20 + rng.normal(0, 3, size=(n, basis.dim))
    return [FunctionalDatum(basis, c, i) for i, c in enumerate(C)]


def beta_star(s):
    return np.sin(np.pi * s / 24) / 24


def exact_integrals(curves, beta, n=20_001):
    basis = curves[0].basis
    C = np.array([c.coeffs for c in curves])
    edges = piece_edges([basis], 0.0, 24.0)
    total = np.zeros(len(curves))
    for a, b in zip(edges[:-1], edges[1:]):
        x = np.linspace(a, b, n)
        total += trapezoid(C @ eval_basis(basis, x).T * beta(x), x, axis=1)
    return total


def test_integral_reduction_matches_trapezoid():
    rng = np.random.default_rng(1)
    bb = make_equispaced_basis("bspline", 4, 10, DAY)
    J = gram(XB, bb)
    edges = piece_edges([XB, bb], 0.0, 24.0)
    for _ in range(2):
        c, b = rng.normal(size=XB.dim), rng.normal(size=bb.dim)
        x = FunctionalDatum(XB, c)
        beta = FunctionalDatum(bb, b)
        assert c @ J @ b == pytest.approx(trapezoid_curve_product(x, beta, 0, 24, edges), abs=1e-8)


def test_noiseless_recovery():
    n = 300
    xs = exposures(n)
    eta = np.log(17.0) + exact_integrals(xs, beta_star)
    spec = SflmSpec(lam=1e-8)
    fit = fit_sflm(np.exp(eta), xs, np.arange(n), spec)
    s = np.linspace(0, 24, 20_001)
    err = np.sqrt(trapezoid((fit.beta1(s) - beta_star(s)) ** 2, s))
    assert err <= 1e-4
    assert fit.beta0 == pytest.approx(np.log(17.0), abs=1e-4)
    assert fit.beta1.basis == spec.beta_basis
    assert fit.residuals.shape == (n,)


def test_constant_exposure_is_rank_deficient():
    same = FunctionalDatum(XB, np.full(XB.dim, 21.0))
    counts = np.random.default_rng(2).poisson(17, 50) + 1
    with pytest.raises(RankDeficientError) as info:
        fit_sflm(counts, [same] * 50, np.arange(50), SflmSpec(lam=1.0, trend=TrendSpec("none")))
    assert "intercept" in info.value.blocks and "beta1" in info.value.blocks


def test_shrinkage_monotone_in_lambda():
    rng = np.random.default_rng(3)
    n = 200
    xs = exposures(n, 3)
    counts = np.exp(np.log(17) + rng.normal(0, 0.2, n))
    s = np.linspace(0, 24, 2001)
    l1 = []
    for k in range(-6, 5):
        fit = fit_sflm(counts, xs, np.arange(n), SflmSpec(lam=10.0**k))
        l1.append(trapezoid(np.abs(fit.beta1(s)), s))
    assert all(b <= a * (1 + 1e-6) for a, b in zip(l1, l1[1:]))


def test_predictions_inverse_link():
    xs = exposures(10)
    fit = fit_sflm(np.full(10, 17.0) * np.exp(np.linspace(0, 0.1, 10)), xs, np.arange(10), SflmSpec(lam=1.0, trend=TrendSpec("none")))
    zero = dataclasses.replace(fit, beta0=0.0, beta1=FunctionalDatum(fit.beta1.basis, np.zeros(fit.beta1.basis.dim)))
    np.testing.assert_allclose(predict_sflm(zero, xs, np.arange(10)), 1.0)
    b17 = dataclasses.replace(zero, beta0=np.log(17.0))
    np.testing.assert_allclose(predict_sflm(b17, xs, np.arange(10)), 17.0)
    offset = dataclasses.replace(zero, spec=SflmSpec(log_offset=0.5, trend=TrendSpec("none")))
    np.testing.assert_allclose(predict_sflm(offset, xs, np.arange(10)), 0.5)


def test_saturated_fit_has_lowest_training_error():
    rng = np.random.default_rng(4)
    n = 120
    xs = exposures(n, 4)
    counts = rng.poisson(17, n) + 1
    idx = np.arange(n)

    def rmse(lam):
        fit = fit_sflm(counts, xs, idx, SflmSpec(lam=lam))
        return np.sqrt(np.mean((predict_sflm(fit, xs, idx) - counts) ** 2))

    base = rmse(1e-10)
    assert all(base <= rmse(lam) + 1e-9 for lam in (1e-3, 1.0, 1e3))


def test_normal_equations_at_solution():
    rng = np.random.default_rng(5)
    n = 150
    xs = exposures(n, 5)
    counts = rng.poisson(17, n) + 1
    fit = fit_sflm(counts, xs, np.arange(n), SflmSpec(lam=0.3))
    prob = _SflmProblem(counts, xs, np.arange(n), fit.spec)
    sol = prob.design.solve(prob.y, (fit.lam,))
    grad = prob.design.normal_residual(prob.y, sol)
    scale = np.abs(prob.design.Z.T @ prob.y).max()
    assert np.abs(grad).max() <= 1e-8 * scale


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    n = 100
    xs = exposures(n, 6)
    counts = rng.poisson(17, n) + 1
    idx = np.arange(n)
    perm = rng.permutation(n)
    a = fit_sflm(counts, xs, idx, SflmSpec(lam=0.1))
    b = fit_sflm(counts[perm], [xs[i] for i in perm], idx[perm], SflmSpec(lam=0.1))
    np.testing.assert_allclose(a.beta1.coeffs, b.beta1.coeffs, atol=1e-10)


def test_log_shift_moves_only_intercept():
    rng = np.random.default_rng(7)
    n = 100
    xs = exposures(n, 7)
    counts = (rng.poisson(17, n) + 1).astype(float)
    a = fit_sflm(counts, xs, np.arange(n), SflmSpec(lam=0.1))
    b = fit_sflm(counts * np.exp(0.7), xs, np.arange(n), SflmSpec(lam=0.1))
    assert b.beta0 - a.beta0 == pytest.approx(0.7, abs=1e-10)
    np.testing.assert_allclose(a.beta1.coeffs, b.beta1.coeffs, atol=1e-10)
    np.testing.assert_allclose(a.trend_coeffs, b.trend_coeffs, atol=1e-10)


def test_gcv_lambda_is_from_grid():
    rng = np.random.default_rng(8)
    n = 200
    xs = exposures(n, 8)
    counts = rng.poisson(17, n) + 1
    fit = fit_sflm(counts, xs, np.arange(n))
    assert fit.lam > 0
    assert 0 < fit.edf < n


def test_count_and_basis_errors():
    xs = exposures(5)
    with pytest.raises(ValueError, match="log_offset"):
        fit_sflm([1, 2, 0, 4, 5], xs, np.arange(5), SflmSpec(lam=1.0))
    fit_sflm([1, 2, 0, 4, 5], xs, np.arange(5), SflmSpec(lam=1.0, log_offset=1.0, trend=TrendSpec("none")))
    other = [FunctionalDatum(make_equispaced_basis("bspline", 4, 3, Interval(0, 12)), np.ones(7))] * 5
    with pytest.raises(DomainError):
        fit_sflm([1, 2, 3, 4, 5], other, np.arange(5), SflmSpec(lam=1.0))
    with pytest.raises(ValueError):
        fit_sflm([1, 2, 3], xs, np.arange(5), SflmSpec(lam=1.0))


def _noisy_problem(n=150, seed=9):
    rng = np.random.default_rng(seed)
    xs = exposures(n, seed)
    counts = rng.poisson(17, n) + 1
    return counts, xs, np.arange(n)


def test_bootstrap_noiseless_band_collapses():
    n = 80
    xs = exposures(n, 10)
    eta = np.log(17.0) + exact_integrals(xs, beta_star)
    counts = np.exp(eta)
    fit = fit_sflm(counts, xs, np.arange(n), SflmSpec(lam=1e-8, trend=TrendSpec("none")))
    # make the residuals exactly zero: refit on the fitted log values
    exact = np.exp(fit.fitted)
    fit = fit_sflm(exact, xs, np.arange(n), fit.spec)
    band = wild_bootstrap_band(fit, exact, xs, np.arange(n), n_reps=20, seed=1)
    np.testing.assert_allclose(band.lower, band.estimate, atol=1e-8)
    np.testing.assert_allclose(band.upper, band.estimate, atol=1e-8)


def test_bootstrap_reproducible_and_ordered():
    counts, xs, idx = _noisy_problem()
    fit = fit_sflm(counts, xs, idx, SflmSpec(lam=1.0))
    a = wild_bootstrap_band(fit, counts, xs, idx, n_reps=100, seed=5)
    b = wild_bootstrap_band(fit, counts, xs, idx, n_reps=100, seed=5)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    assert np.all(a.lower <= a.upper)
    c = wild_bootstrap_band(fit, counts, xs, idx, n_reps=100, seed=6)
    assert not np.array_equal(a.lower, c.lower)
    m = wild_bootstrap_band(fit, counts, xs, idx, n_reps=100, seed=5, law="mammen")
    assert np.all(m.lower <= m.upper)


def test_bootstrap_matches_explicit_refits():
    counts, xs, idx = _noisy_problem(60, 11)
    fit = fit_sflm(counts, xs, idx, SflmSpec(lam=0.5))
    grid = np.linspace(0, 24, 7)
    band = wild_bootstrap_band(fit, counts, xs, idx, n_reps=30, seed=2, grid=grid)
    curves = []
    for r in range(30):
        v = draw_multipliers(counts.size, 2, r)
        ystar = np.exp(fit.fitted + v * fit.residuals)
        refit = fit_sflm(ystar, xs, idx, fit.spec)
        curves.append(refit.beta1(grid))
    curves = np.array(curves)
    np.testing.assert_allclose(band.lower, np.quantile(curves, 0.025, axis=0), atol=1e-9)
    np.testing.assert_allclose(band.upper, np.quantile(curves, 0.975, axis=0), atol=1e-9)


def test_bootstrap_argument_errors():
    counts, xs, idx = _noisy_problem(40, 12)
    fit = fit_sflm(counts, xs, idx, SflmSpec(lam=1.0))
    with pytest.raises(ValueError):
        wild_bootstrap_band(fit, counts, xs, idx, n_reps=1)
    with pytest.raises(DomainError):
        wild_bootstrap_band(fit, counts, xs, idx, grid=[-1.0, 3.0])
    with pytest.raises(ValueError, match="not produced"):
        wild_bootstrap_band(fit, counts + 1, xs, idx)


def test_rademacher_multipliers():
    v = draw_multipliers(10_000, 3, 0)
    assert set(np.unique(v)) == {-1.0, 1.0}
    assert abs(v.mean()) < 0.05
    np.testing.assert_array_equal(v, draw_multipliers(10_000, 3, 0))
    m = draw_multipliers(100_000, 3, 0, "mammen")
    assert abs(m.mean()) < 0.02 and abs((m**2).mean() - 1) < 0.02
    with pytest.raises(ValueError):
        draw_multipliers(3, 0, 0, "gaussian")
