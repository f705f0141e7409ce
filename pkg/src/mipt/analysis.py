"""Locating the transition: exp-polynomial fits, bootstrap, extrapolation, data collapse.

Curves such as the cross-realization variance are modelled as
``sign * exp(a_0 + a_1 x + ... + a_k x^k)``.  Taking logs turns that into a
weighted linear least-squares problem, so fits are exact and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq, minimize_scalar

DEFAULT_DEGREES = tuple(range(2, 7))
MAX_FAIL_FRACTION = 0.2
_GRID = 512


class AnalysisError(ValueError):
    pass


class NoInteriorMaximum(AnalysisError):
    pass


class NoCrossing(AnalysisError):
    pass


@dataclass
class FitResult:
    """Weighted fit of ``log(sign * y)`` to a polynomial; coefficients in ascending order."""

    coefficients: np.ndarray
    covariance: np.ndarray
    reduced_chi2: float
    model_sign: int
    degree: int
    n_points: int
    chi2_by_degree: dict = field(default_factory=dict)

    def log_model(self, x, coefficients=None):
        c = self.coefficients if coefficients is None else coefficients
        return P.polyval(np.asarray(x, dtype=float), c)

    def __call__(self, x, coefficients=None):
        return self.model_sign * np.exp(self.log_model(x, coefficients))


def _weighted_polyfit(x, y, sigma, degree):
    A = np.vander(x, degree + 1, increasing=True)
    w = 1.0 / sigma
    Aw = A * w[:, None]
    coef, _, rank, _ = np.linalg.lstsq(Aw, y * w, rcond=None)
    if rank < degree + 1:
        raise np.linalg.LinAlgError(f"rank-deficient design for degree {degree}")
    cov = np.linalg.inv(Aw.T @ Aw)
    resid = (y - A @ coef) * w
    return coef, 0.5 * (cov + cov.T), float(resid @ resid)


def fit_exp_poly(xs, ys, yerrs, sign: int = 1, degrees: Sequence[int] = DEFAULT_DEGREES) -> FitResult:
    """Fit ``y ~ sign * exp(sum a_i x^i)``, picking the degree whose reduced chi^2 is closest to 1.

    Ties (within 1e-9) go to the lower degree.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    err = np.asarray(yerrs, dtype=float)
    if sign not in (1, -1):
        raise AnalysisError("sign must be +1 or -1")
    if x.size < 5:
        raise AnalysisError(f"need at least 5 points, got {x.size}")
    if np.any(sign * y <= 0):
        raise AnalysisError("sign * y must be positive for every point")
    if np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise AnalysisError("errors must be positive and finite")
    z = np.log(sign * y)
    sz = err / np.abs(y)
    best = None
    table = {}
    for k in degrees:
        dof = x.size - (k + 1)
        if dof < 1:
            continue
        try:
            coef, cov, chi2 = _weighted_polyfit(x, z, sz, k)
        except np.linalg.LinAlgError:
            continue
        red = chi2 / dof
        table[k] = red
        score = abs(red - 1.0)
        if best is None or score < best[0] - 1e-9:
            best = (score, k, coef, cov, red)
    if best is None:
        raise AnalysisError("no polynomial degree could be fitted (degenerate grid or too few points)")
    _, k, coef, cov, red = best
    return FitResult(coef, cov, red, sign, k, x.size, table)


def _draw(fit: FitResult, n: int, rng: np.random.Generator) -> np.ndarray:
    if not np.any(fit.covariance):
        return np.repeat(fit.coefficients[None, :], n, axis=0)
    return rng.multivariate_normal(fit.coefficients, fit.covariance, size=n, method="eigh")


def _poly_argmax(coef, lo, hi, grid):
    """Interior argmax of a polynomial on [lo, hi], or None if the maximum sits on an end."""
    d = P.polyder(coef)
    vals = P.polyval(grid, d)
    best_x, best_v = None, -np.inf
    for i in np.nonzero((vals[:-1] > 0) & (vals[1:] <= 0))[0]:
        a, b = grid[i], grid[i + 1]
        r = b if vals[i + 1] == 0 else brentq(lambda t: P.polyval(t, d), a, b, xtol=1e-14)
        v = P.polyval(r, coef)
        if v > best_v:
            best_x, best_v = r, v
    if best_x is None:
        return None
    if max(P.polyval(lo, coef), P.polyval(hi, coef)) > best_v:
        return None
    return best_x


def peak_location(fit: FitResult, domain) -> float:
    """Deterministic argmax of the central fit; raises if there is no interior maximum."""
    lo, hi = map(float, domain)
    if fit.model_sign < 0:
        raise AnalysisError("peak extraction needs a positive (sign=+1) model")
    grid = np.linspace(lo, hi, _GRID)
    r = _poly_argmax(fit.coefficients, lo, hi, grid)
    if r is None:
        raise NoInteriorMaximum(f"fitted curve has no interior maximum on [{lo}, {hi}]")
    return float(r)


def bootstrap_peak(fit: FitResult, domain, n_boot: int = 1000, rng=None):
    """Mean and spread of the argmax over parameter draws from the fit covariance."""
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = map(float, domain)
    center = peak_location(fit, domain)
    if not np.any(fit.covariance):
        return center, 0.0
    grid = np.linspace(lo, hi, _GRID)
    peaks = [_poly_argmax(c, lo, hi, grid) for c in _draw(fit, n_boot, rng)]
    good = np.array([p for p in peaks if p is not None])
    failed = n_boot - good.size
    if failed > MAX_FAIL_FRACTION * n_boot:
        raise NoInteriorMaximum(
            f"{failed}/{n_boot} bootstrap samples have no interior maximum on [{lo}, {hi}]"
        )
    return float(good.mean()), float(good.std(ddof=1))


def _crossings(fa, fb, ca, cb, grid):
    if fa.model_sign == fb.model_sign:
        diff = lambda t: P.polyval(t, ca) - P.polyval(t, cb)
    else:
        diff = lambda t: fa(t, ca) - fb(t, cb)
    vals = diff(grid)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)[0]:
        a, b = grid[i], grid[i + 1]
        if vals[i] == 0:
            roots.append(a)
        elif vals[i + 1] == 0:
            continue
        else:
            roots.append(brentq(diff, a, b, xtol=1e-14))
    return roots


def crossing_location(fitA: FitResult, fitB: FitResult, domain) -> float:
    lo, hi = map(float, domain)
    roots = _crossings(fitA, fitB, fitA.coefficients, fitB.coefficients, np.linspace(lo, hi, _GRID))
    if not roots:
        raise NoCrossing(f"fitted curves do not cross on [{lo}, {hi}]")
    if len(roots) > 1:
        raise NoCrossing(f"fitted curves cross {len(roots)} times on [{lo}, {hi}]: {roots}")
    return float(roots[0])


def bootstrap_crossing(fitA: FitResult, fitB: FitResult, domain, n_boot: int = 1000, rng=None):
    """Mean and spread of the crossing point over independent parameter draws of both fits."""
    rng = np.random.default_rng() if rng is None else rng
    lo, hi = map(float, domain)
    center = crossing_location(fitA, fitB, domain)
    if not np.any(fitA.covariance) and not np.any(fitB.covariance):
        return center, 0.0
    grid = np.linspace(lo, hi, _GRID)
    out = []
    for ca, cb in zip(_draw(fitA, n_boot, rng), _draw(fitB, n_boot, rng)):
        roots = _crossings(fitA, fitB, ca, cb, grid)
        if roots:
            out.append(min(roots, key=lambda r: abs(r - center)))
    failed = n_boot - len(out)
    if failed > MAX_FAIL_FRACTION * n_boot:
        raise NoCrossing(f"{failed}/{n_boot} bootstrap samples have no crossing on [{lo}, {hi}]")
    out = np.asarray(out)
    return float(out.mean()), float(out.std(ddof=1))


def extrapolate_linear(xs, ys, yerrs):
    """Weighted straight-line fit; returns the intercept at x = 0 and its standard error."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    err = np.asarray(yerrs, dtype=float)
    if x.size < 2:
        raise AnalysisError("need at least 2 points to extrapolate")
    if np.any(err <= 0):
        raise AnalysisError("errors must be positive")
    coef, cov, _ = _weighted_polyfit(x, y, err, 1)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


@dataclass
class CriticalEstimate:
    lambda_c: float
    error: float
    method: str  # "variance-peak" or "tmi-crossing"
    inputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"lambda_c": self.lambda_c, "error": self.error, "method": self.method, "inputs": self.inputs}


def _domain_of(lams, domain):
    return (float(np.min(lams)), float(np.max(lams))) if domain is None else tuple(map(float, domain))


def variance_peak_estimate(curves: dict, domain=None, n_boot: int = 1000, rng=None) -> CriticalEstimate:
    """Peak of var S per size, then a linear extrapolation in 1/L.

    ``curves`` maps L to ``(lambdas, var_S, stderr_var)``.
    """
    rng = np.random.default_rng() if rng is None else rng
    inputs = []
    for L in sorted(curves):
        lams, v, e = (np.asarray(a, dtype=float) for a in curves[L])
        dom = _domain_of(lams, domain)
        sel = (lams >= dom[0]) & (lams <= dom[1])
        fit = fit_exp_poly(lams[sel], v[sel], e[sel], sign=1)
        lam_max, err = bootstrap_peak(fit, dom, n_boot, rng)
        inputs.append({"L": int(L), "lambda_max": lam_max, "error": err, "degree": fit.degree,
                       "reduced_chi2": fit.reduced_chi2})
    if len(inputs) < 2:
        raise AnalysisError("need at least two system sizes to extrapolate")
    lc, lc_err = extrapolate_linear([1.0 / r["L"] for r in inputs],
                                    [r["lambda_max"] for r in inputs],
                                    [r["error"] for r in inputs])
    return CriticalEstimate(lc, lc_err, "variance-peak", inputs)


def tmi_crossing_estimate(curves: dict, domain=None, n_boot: int = 1000, rng=None) -> CriticalEstimate:
    """Crossings of ``-exp(poly)`` fits to I3 for adjacent sizes, extrapolated in 1/Lbar^2.

    ``curves`` maps L to ``(lambdas, mean_tmi, stderr_tmi)``; only points with
    negative I3 enter the fits.
    """
    rng = np.random.default_rng() if rng is None else rng
    fits = {}
    dom_all = None
    for L in sorted(curves):
        lams, v, e = (np.asarray(a, dtype=float) for a in curves[L])
        dom = _domain_of(lams, domain)
        sel = (lams >= dom[0]) & (lams <= dom[1]) & (v < 0)
        fits[L] = fit_exp_poly(lams[sel], v[sel], e[sel], sign=-1)
        lo, hi = lams[sel].min(), lams[sel].max()
        dom_all = (lo, hi) if dom_all is None else (max(dom_all[0], lo), min(dom_all[1], hi))
    sizes = sorted(fits)
    if len(sizes) < 2:
        raise AnalysisError("need at least two system sizes for crossings")
    inputs = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        lam_x, err = bootstrap_crossing(fits[a], fits[b], dom_all, n_boot, rng)
        inputs.append({"L_pair": [int(a), int(b)], "L_bar": 0.5 * (a + b), "lambda_cross": lam_x, "error": err})
    if len(inputs) == 1:
        r = inputs[0]
        return CriticalEstimate(r["lambda_cross"], r["error"], "tmi-crossing", inputs)
    lc, lc_err = extrapolate_linear([r["L_bar"] ** -2 for r in inputs],
                                    [r["lambda_cross"] for r in inputs],
                                    [r["error"] for r in inputs])
    return CriticalEstimate(lc, lc_err, "tmi-crossing", inputs)


@dataclass
class CollapseResult:
    nu: float
    nu_error_band: tuple
    chi2_profile: np.ndarray  # columns: nu, averaged reduced chi^2
    s_critical: dict = field(default_factory=dict)  # L -> interpolated S(L, lambda_c)

    @property
    def chi2_min(self) -> float:
        return float(np.min(self.chi2_profile[:, 1]))


class _CollapseData:
    def __init__(self, L, lam, S, err, lambda_c, interp_degree, interp_points, window_quantile):
        self.lambda_c = lambda_c
        self.s_crit = {}
        Ls, ys = [], []
        for size in np.unique(L):
            sel = L == size
            lams, s, e = lam[sel], S[sel], err[sel]
            if not lams.min() <= lambda_c <= lams.max():
                raise AnalysisError(f"lambda_c={lambda_c} outside sampled range for L={size}")
            near = np.argsort(np.abs(lams - lambda_c))[:interp_points]
            deg = min(interp_degree, near.size - 1)
            coef, _, _ = _weighted_polyfit(lams[near] - lambda_c, s[near], e[near], deg)
            self.s_crit[int(size)] = float(coef[0])
            ys.append(s - coef[0])
            Ls.append(np.full(s.shape, float(size)))
        self.y = S - np.array([self.s_crit[int(l)] for l in L])
        self.L = L.astype(float)
        self.dl = lam - lambda_c
        self.err = err
        # the fit window is fixed in lambda so the point set does not change with nu
        cut = np.quantile(np.abs(self.dl), window_quantile)
        self.win = np.abs(self.dl) <= cut + 1e-12

    def chi2(self, nu, orders):
        x = self.dl[self.win] * self.L[self.win] ** (1.0 / nu)
        y = self.y[self.win]
        e = self.err[self.win]
        xs = x / np.max(np.abs(x))
        vals = []
        for m in orders:
            dof = x.size - (m + 1)
            if dof < 1:
                continue
            _, _, c2 = _weighted_polyfit(xs, y, e, m)
            vals.append(c2 / dof)
        if not vals:
            raise AnalysisError("too few points inside the collapse window for the requested orders")
        return float(np.mean(vals))


def data_collapse(dataset, lambda_c: float, nu_grid=None, orders=(5, 6, 7, 8),
                  window_quantile: float = 0.8, interp_degree: int = 3,
                  interp_points: int = 6) -> CollapseResult:
    """Estimate nu from ``S(L, lam) - S(L, lambda_c) = F[(lam - lambda_c) L^(1/nu)]``.

    ``dataset`` is an iterable of ``(L, lam, S, err)`` rows.  For each nu a
    single polynomial of order m is fitted to the rescaled points inside the
    window; the reduced chi^2 is averaged over ``orders``.  The error band is
    where chi^2 stays below twice its minimum.
    """
    rows = np.asarray(list(dataset), dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 4:
        raise AnalysisError("dataset rows must be (L, lambda, S, err)")
    L, lam, S, err = rows.T
    sizes = np.unique(L)
    if sizes.size < 3:
        raise AnalysisError(f"need at least 3 system sizes, got {sizes.size}")
    for size in sizes:
        if np.sum(L == size) < 8:
            raise AnalysisError(f"need at least 8 lambda points for L={size:g}")
    data = _CollapseData(L, lam, S, err, float(lambda_c), interp_degree, interp_points, window_quantile)
    grid = np.arange(0.3, 2.5001, 0.01) if nu_grid is None else np.asarray(nu_grid, dtype=float)
    prof = np.array([data.chi2(nu, orders) for nu in grid])
    i = int(np.argmin(prof))
    f = lambda nu: data.chi2(nu, orders)
    if 0 < i < grid.size - 1:
        res = minimize_scalar(f, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden",
                              options={"xtol": 1e-6})
        nu_best, c_best = float(res.x), float(res.fun)
        if c_best > prof[i]:
            nu_best, c_best = float(grid[i]), float(prof[i])
    else:
        nu_best, c_best = float(grid[i]), float(prof[i])
    thresh = 2.0 * c_best
    g = lambda nu: f(nu) - thresh
    lo_i = i
    while lo_i > 0 and prof[lo_i - 1] < thresh:
        lo_i -= 1
    hi_i = i
    while hi_i < grid.size - 1 and prof[hi_i + 1] < thresh:
        hi_i += 1
    lo = grid[lo_i] if lo_i == 0 else brentq(g, grid[lo_i - 1], min(grid[lo_i], nu_best))
    hi = grid[hi_i] if hi_i == grid.size - 1 else brentq(g, max(grid[hi_i], nu_best), grid[hi_i + 1])
    lo, hi = min(lo, nu_best), max(hi, nu_best)
    profile = np.column_stack([grid, prof])
    return CollapseResult(nu_best, (float(lo), float(hi)), profile, dict(data.s_crit))
