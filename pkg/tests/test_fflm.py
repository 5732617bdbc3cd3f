import numpy as np
import pytest
from scipy.integrate import trapezoid

from funreg.basis import Interval, eval_basis, make_equispaced_basis
from funreg.errors import DomainError, RankDeficientError
from funreg.fflm import FflmFit, FflmSpec, active_mask, eval_surface, fit_fflm, fit_fflm_matrix, predict_fflm
from funreg.smoother import FunctionalDatum
from funreg.trend import trend_design

YEAR = Interval(0.0, 365.0)
XB = make_equispaced_basis("bspline", 4, 24, YEAR)
LAG = 60.0


def temperatures(n, seed=0):
    rng = np.random.default_rng(seed)
    centres = np.linspace(0, 365, XB.dim)
    season = 6 - 15 * np.cos(2 * np.pi * (centres - 15) / 365)
    C = season + rng.normal(0, 3, size=(n, XB.dim))
    return [FunctionalDatum(XB, c, 1981 + i) for i, c in enumerate(C)]


def window_integrals(curves, surface_fn, grid, n=601, knots=()):
    """``∫_{max(0,t-L)}^t x_i(s) f(s, t) ds`` by the trapezoid rule."""
    C = np.array([c.coeffs for c in curves])
    out = np.zeros((len(curves), grid.size))
    for g, t in enumerate(grid):
        lo = max(0.0, t - LAG)
        if t <= lo:
            continue
        # split at knots so every piece is polynomial in s
        cuts = sorted({k for k in (*XB.interior_knots, *knots) if lo < k < t})
        edges = np.array([lo, *cuts, t])
        for a, b in zip(edges[:-1], edges[1:]):
            s = np.linspace(a, b, n)
            vals = (C @ eval_basis(XB, s).T) * surface_fn(s, t)
            out[:, g] += trapezoid(vals, s, axis=1)
    return out


def beta0_true(t):
    return np.log(17.0) + 0.12 * np.cos(2 * np.pi * (t - 15) / 365)


def separable(s, t):
    return 0.004 * np.exp(-(t - s) / 15) * (1 + 0.8 * np.cos(2 * np.pi * (t - 290) / 365))


def test_zero_surface_recovered_as_zero():
    xs = temperatures(8, 1)
    spec = FflmSpec(lam_s=1e-3, lam_t=1e-3)
    grid = spec.grid
    # a beta0 inside the t basis makes the zero surface an exact solution
    E = eval_basis(spec.t_basis, grid)
    b0 = np.linalg.lstsq(E, beta0_true(grid), rcond=None)[0]
    Y = np.tile(E @ b0, (8, 1))
    fit = fit_fflm_matrix(Y, xs, np.arange(1981, 1989), spec)
    assert np.abs(fit.surface).max() < 1e-8
    np.testing.assert_allclose(fit.beta0_coeffs, b0, atol=1e-7)
    np.testing.assert_allclose(fit.year_trend_coeffs, 0.0, atol=1e-7)


def test_separable_surface_recovery():
    n = 20
    xs = temperatures(n, 2)
    spec = FflmSpec()
    grid = spec.grid
    rng = np.random.default_rng(3)
    Y = beta0_true(grid)[None, :] + window_integrals(xs, separable, grid) + rng.normal(0, 0.01, (n, grid.size))
    fit = fit_fflm_matrix(Y, xs, np.arange(1981, 1981 + n), spec)
    s = np.linspace(0, 365, 200)
    t = np.linspace(0, 365, 200)
    est = eval_surface(fit, s, t)
    inside = np.isfinite(est)
    truth = separable(s[:, None], t[None, :])
    rel = np.sqrt(np.sum((est - truth)[inside] ** 2) / np.sum(truth[inside] ** 2))
    assert rel <= 0.2


def test_single_year_rank_deficient():
    xs = temperatures(1)
    spec = FflmSpec(lam_s=1.0, lam_t=1.0)
    Y = np.tile(beta0_true(spec.grid), (1, 1))
    with pytest.raises(RankDeficientError) as info:
        fit_fflm_matrix(Y, xs, [1981], spec)
    assert "year_trend" in info.value.blocks


def test_inactive_coefficients_are_inert():
    spec = FflmSpec(lam_s=1.0, lam_t=1.0)
    active = active_mask(spec)
    assert 0 < active.sum() < active.size
    xs = temperatures(6, 4)
    grid = spec.grid
    rng = np.random.default_rng(5)
    Y = beta0_true(grid)[None, :] + rng.normal(0, 0.05, (6, grid.size))
    fit = fit_fflm_matrix(Y, xs, np.arange(1981, 1987), spec)
    noisy = fit.surface.copy()
    noisy[~active] = rng.normal(0, 10, (~active).sum())
    S, T = spec.s_basis, spec.t_basis

    def direct(B):
        return lambda s, t: eval_basis(S, s) @ B @ eval_basis(T, [t])[0]

    pick = grid[::40]
    a = window_integrals(xs, direct(fit.surface), pick, n=201)
    b = window_integrals(xs, direct(noisy), pick, n=201)
    np.testing.assert_allclose(a, b, atol=1e-6 * np.abs(a).max())


def test_predictions_match_direct_double_sum():
    n = 5
    xs = temperatures(n, 6)
    spec = FflmSpec(lam_s=1e-2, lam_t=1e-2)
    grid = spec.grid
    rng = np.random.default_rng(7)
    Y = beta0_true(grid)[None, :] + window_integrals(xs, separable, grid, n=101) + rng.normal(0, 0.02, (n, grid.size))
    years = np.arange(1981, 1981 + n)
    fit = fit_fflm_matrix(Y, xs, years, spec)
    pick = np.arange(0, grid.size, 23)
    surf = lambda s, t: eval_basis(spec.s_basis, s) @ fit.surface @ eval_basis(spec.t_basis, [t])[0]
    integral = window_integrals(xs, surf, grid[pick], n=10_001, knots=spec.s_basis.interior_knots)
    trend = trend_design(fit.trend_basis, years) @ fit.year_trend_coeffs
    b0 = eval_basis(spec.t_basis, grid[pick]) @ fit.beta0_coeffs
    want = np.exp(b0[None, :] + trend[:, None] + integral)
    got = predict_fflm(fit, xs, years)[:, pick]
    np.testing.assert_allclose(got, want, rtol=1e-7)


def test_eval_surface_masks_outside_window():
    spec = FflmSpec(lam_s=1.0, lam_t=1.0)
    xs = temperatures(3, 8)
    Y = np.tile(beta0_true(spec.grid), (3, 1))
    fit = fit_fflm_matrix(Y, xs, [1981, 1982, 1983], spec)
    s = np.array([0.0, 50.0, 100.0, 200.0])
    t = np.array([40.0, 100.0, 150.0])
    v = eval_surface(fit, s, t)
    expect_nan = ~((s[:, None] <= t[None, :]) & (s[:, None] >= t[None, :] - LAG))
    np.testing.assert_array_equal(np.isnan(v), expect_nan)


def test_fit_from_curves_logs_count_scale():
    xs = temperatures(4, 9)
    mb = make_equispaced_basis("bspline", 4, 8, YEAR)
    mort = [FunctionalDatum(mb, np.full(mb.dim, 17.0)) for _ in xs]
    spec = FflmSpec(lam_s=1.0, lam_t=1.0)
    fit = fit_fflm(mort, xs, [1981, 1982, 1983, 1984], spec)
    np.testing.assert_allclose(predict_fflm(fit, xs, [1981, 1982, 1983, 1984]), 17.0, rtol=1e-8)
    bad = [FunctionalDatum(mb, np.full(mb.dim, -1.0)) for _ in xs]
    with pytest.raises(ValueError, match="nonpositive"):
        fit_fflm(bad, xs, [1981, 1982, 1983, 1984], spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        FflmSpec(lag_max=0)
    with pytest.raises(ValueError):
        FflmSpec(lam_s="aic")
    with pytest.raises(DomainError):
        FflmSpec(t_basis=make_equispaced_basis("bspline", 4, 3, Interval(0, 100)))
    xs = [FunctionalDatum(make_equispaced_basis("bspline", 4, 3, Interval(0, 24)), np.ones(7))] * 2
    with pytest.raises(DomainError):
        fit_fflm_matrix(np.zeros((2, 365)), xs, [1, 2], FflmSpec(lam_s=1.0, lam_t=1.0))
    with pytest.raises(ValueError):
        fit_fflm_matrix(np.zeros((3, 365)), temperatures(2), [1, 2], FflmSpec(lam_s=1.0, lam_t=1.0))


def test_year_permutation_equivariance():
    n = 6
    xs = temperatures(n, 10)
    spec = FflmSpec(lam_s=1e-2, lam_t=1e-2)
    rng = np.random.default_rng(11)
    Y = beta0_true(spec.grid)[None, :] + rng.normal(0, 0.05, (n, spec.grid.size))
    years = np.arange(1981, 1981 + n)
    perm = rng.permutation(n)
    a = fit_fflm_matrix(Y, xs, years, spec)
    b = fit_fflm_matrix(Y[perm], [xs[i] for i in perm], years[perm], spec)
    np.testing.assert_allclose(a.surface, b.surface, atol=1e-9)


@pytest.mark.parametrize("lam", [0.0, 1e-2, 1.0])
def test_no_temperature_effect_gives_flat_surface(lam):
    n = 31
    xs = temperatures(n, 8)
    spec = FflmSpec(lam_s=lam, lam_t=lam)
    grid = spec.grid
    Y = np.tile(beta0_true(grid), (n, 1))
    fit = fit_fflm_matrix(Y, xs, np.arange(1981, 1981 + n), spec)
    b0 = eval_basis(spec.t_basis, grid) @ fit.beta0_coeffs
    assert np.abs(b0 - beta0_true(grid)).max() <= 1e-4
    g = np.linspace(0, 365, 731)
    sq = np.nan_to_num(eval_surface(fit, g, g)) ** 2
    assert trapezoid(trapezoid(sq, g, axis=1), g) <= 1e-6


def test_future_temperatures_do_not_move_earlier_predictions():
    n = 6
    xs = temperatures(n, 9)
    spec = FflmSpec(lam_s=1e-2, lam_t=1e-2)
    grid = spec.grid
    rng = np.random.default_rng(10)
    Y = beta0_true(grid)[None, :] + window_integrals(xs, separable, grid, n=101) + rng.normal(0, 0.02, (n, grid.size))
    years = np.arange(1981, 1981 + n)
    fit = fit_fflm_matrix(Y, xs, years, spec)
    t0 = 200.0
    # basis functions of the temperature curve supported entirely after t0
    s = np.linspace(0, 365, 3651)
    E = eval_basis(XB, s)
    late = np.array([s[E[:, j] > 0].min() >= t0 for j in range(XB.dim)])
    assert late.any()
    moved = []
    for c in xs:
        coeffs = c.coeffs.copy()
        coeffs[late] += rng.normal(0, 20, late.sum())
        moved.append(FunctionalDatum(XB, coeffs, c.label))
    a, b = predict_fflm(fit, xs, years), predict_fflm(fit, moved, years)
    early = grid <= t0
    np.testing.assert_allclose(b[:, early], a[:, early], rtol=1e-10)
    assert np.abs(b[:, ~early] - a[:, ~early]).max() > 1e-3


def test_eval_surface_is_the_tensor_double_sum():
    spec = FflmSpec(lam_s=1.0, lam_t=1.0)
    rng = np.random.default_rng(11)
    shape = (spec.s_basis.dim, spec.t_basis.dim)
    fit = FflmFit(np.zeros(shape[1]), np.zeros(shape), active_mask(spec), np.zeros(0), (1.0, 1.0), None, spec, None, 0.0)
    assert eval_surface(fit, [100.0], [100.0])[0, 0] == 0.0
    fit.surface = rng.normal(size=shape)
    pts = [(100.0, 100.0), (50.0, 80.0), (300.0, 330.5), (0.0, 0.0), (305.0, 365.0)]
    for s, t in pts:
        ps, pt = eval_basis(spec.s_basis, [s])[0], eval_basis(spec.t_basis, [t])[0]
        want = sum(fit.surface[j, k] * ps[j] * pt[k] for j in range(shape[0]) for k in range(shape[1]))
        assert eval_surface(fit, [s], [t])[0, 0] == pytest.approx(want, abs=1e-12)
