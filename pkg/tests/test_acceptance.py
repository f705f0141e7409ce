"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

The simulation-heavy criteria (1-7b) share checkpointed sweeps stored in
``tests/acceptance_cache``.  Fill the cache ahead of time with::

    python tests/test_acceptance.py --precompute

after which the pytest run only reads it.  Without a cache the tests run the
sweeps themselves (several hours on one core).
"""

from __future__ import annotations

import math
import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm

from mipt.analysis import data_collapse, tmi_crossing_estimate, variance_peak_estimate
from mipt.entanglement import Partition, entanglement_entropy, page_entropy, tripartite_mutual_information
from mipt.evolution import NoiseStep, StaticDisorder, dense_hamiltonian, noise_amplitude, trotter_step
from mipt.measurement import weak_measure_site
from mipt.qstate import StateVector, make_neel, sigma_z_expectation
from mipt.trajectory import SimParams, point_seed, sweep

pytestmark = pytest.mark.acceptance

CACHE = Path(__file__).parent / "acceptance_cache"
SEED = 20240611
XI_R = 1.3
SIZES = (8, 10, 12)
LAMBDAS = tuple(round(0.2 + 0.1 * k, 10) for k in range(11))  # 0.2 .. 1.2
BURN = 20.0
BOOT = 1000


def report(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}: {detail}")


def ensemble(L, lam, xi_r=XI_R, xi_s=0.0, n=100, **kw):
    seed = point_seed(SEED, L, lam, xi_r, xi_s, kw.get("dt", 0.01))
    kw.setdefault("t_burn", BURN)
    return SimParams(L=L, xi_r=xi_r, xi_s=xi_s, lam=lam, n_realizations=n, master_seed=seed,
                     record_tmi=(L % 4 == 0), **kw)


def page_grid():
    return [ensemble(L, 0.0, n=50) for L in SIZES]


def continuum_grid():
    kw = dict(t_burn=10.0, n_steady_samples=10, t_max=20.0)
    return [ensemble(12, lam, xi_r=2.0, dt=dt, **kw) for lam in (0.5, 2.0) for dt in (0.01, 0.005)]


def main_grid(xi_s):
    return [ensemble(L, lam, xi_s=xi_s) for L in SIZES for lam in LAMBDAS]


GRIDS = {
    "page": page_grid,
    "continuum": continuum_grid,
    "clean": lambda: main_grid(0.0),
    "disordered": lambda: main_grid(3.0),
}


def progress(name):
    def cb(k, n, res):
        p = res.params
        print(f"{name} [{k + 1}/{n}] L={p.L} lam={p.lam:g} dt={p.dt:g} S={res.mean_S:.4f} "
              f"var={res.var_S:.3g}", flush=True)
    return cb


@lru_cache(maxsize=None)
def results(name):
    CACHE.mkdir(exist_ok=True)
    return sweep(GRIDS[name](), checkpoint=CACHE / f"{name}.jsonl", progress=progress(name))


def curves(res, y, e, sizes=SIZES):
    out = {}
    for L in sizes:
        rows = sorted((r for r in res if r.params.L == L), key=lambda r: r.params.lam)
        out[L] = tuple(np.array([getattr(r, a) if a != "lam" else r.params.lam for r in rows])
                       for a in ("lam", y, e))
    return out


@lru_cache(maxsize=None)
def variance_estimate(name):
    return variance_peak_estimate(curves(results(name), "var_S", "stderr_var"),
                                  rng=np.random.default_rng(SEED))


# ---------------------------------------------------------------- criterion 1
def test_c1_page_law(capsys):
    res = results("page")
    devs = {r.params.L: (r.mean_S - page_entropy(r.params.L)) / page_entropy(r.params.L) for r in res}
    ok = all(abs(d) < 0.05 for d in devs.values())
    detail = ", ".join(f"L={L}: S={r.mean_S:.4f} page={page_entropy(L):.4f} ({100 * devs[L]:+.2f}%)"
                       for L, r in zip(SIZES, res))
    report(capsys, 1, "lambda=0 steady entropy within 5% of Page", ok, detail)
    assert ok


# ---------------------------------------------------------------- criterion 2
def test_c2_continuum_limit(capsys):
    res = {(r.params.lam, r.params.dt): r for r in results("continuum")}
    worst, ok = [], True
    for lam in (0.5, 2.0):
        a, b = res[(lam, 0.01)], res[(lam, 0.005)]
        assert np.allclose(a.times, b.times)
        err = np.hypot(a.stderr_curve, b.stderr_curve)
        z = np.abs(a.mean_curve - b.mean_curve) / np.where(err > 0, err, np.inf)
        bad = a.times[z > 2]
        ok &= bad.size == 0
        worst.append(f"lambda={lam}: max |dS|/sigma={z.max():.2f} over {z.size} times"
                     + (f", outside 2 sigma at t={bad.tolist()}" if bad.size else ""))
    report(capsys, 2, "S(t) for dt=0.01 vs 0.005 within 2 combined SE", ok, "; ".join(worst))
    assert ok


# ---------------------------------------------------------------- criterion 3
def test_c3_area_law_plateau(capsys):
    res = {r.params.L: r for r in results("clean") if r.params.lam == 1.0}
    a, b = res[8], res[12]
    diff = abs(a.mean_S - b.mean_S)
    comb = math.hypot(a.stderr_S, b.stderr_S)
    limit = 0.3 * page_entropy(12)
    ok = diff < 2 * comb and a.mean_S < limit and b.mean_S < limit
    report(capsys, 3, "lambda=1 entropy size independent and below 30% of Page(12)", ok,
           f"S(8)={a.mean_S:.4f}+-{a.stderr_S:.4f}, S(12)={b.mean_S:.4f}+-{b.stderr_S:.4f}, "
           f"|diff|/sigma={diff / comb:.2f}, limit={limit:.4f}")
    assert ok


# ---------------------------------------------------------------- criteria 4, 5
def _peaks(est):
    return ", ".join(f"L={r['L']}: {r['lambda_max']:.4f}+-{r['error']:.4f}" for r in est.inputs)


def test_c4_critical_point_clean(capsys):
    est = variance_estimate("clean")
    lm = [r["lambda_max"] for r in est.inputs]
    decreasing = all(x > y for x, y in zip(lm[:-1], lm[1:]))
    inside = 0.48 <= est.lambda_c <= 0.60
    ok = decreasing and inside
    report(capsys, 4, "variance peaks drift down with L, 1/L extrapolation in [0.48, 0.60]", ok,
           f"{_peaks(est)}; lambda_c={est.lambda_c:.4f}+-{est.error:.4f}"
           f"{'' if decreasing else ' (not decreasing)'}")
    assert ok


def test_c5_disorder_lowers_lambda_c(capsys):
    clean = variance_estimate("clean")
    dis = variance_estimate("disordered")
    gap = clean.lambda_c - dis.lambda_c
    comb = math.hypot(clean.error, dis.error)
    ok = gap > comb
    report(capsys, 5, "xi_s=3 critical point below the clean one by more than combined errors", ok,
           f"clean {clean.lambda_c:.4f}+-{clean.error:.4f}, xi_s=3 {dis.lambda_c:.4f}+-{dis.error:.4f} "
           f"({_peaks(dis)}), gap={gap:.4f}, combined error={comb:.4f}")
    assert ok


# ---------------------------------------------------------------- criterion 6
def test_c6_tmi_cross_check(capsys):
    var = variance_estimate("clean")
    tmi = tmi_crossing_estimate(curves(results("clean"), "mean_tmi", "stderr_tmi", sizes=(8, 12)),
                                rng=np.random.default_rng(SEED))
    diff = abs(var.lambda_c - tmi.lambda_c)
    comb = math.hypot(var.error, tmi.error)
    ok = diff < 2 * comb
    report(capsys, 6, "TMI crossing (L=8,12) agrees with variance-peak lambda_c", ok,
           f"crossing {tmi.lambda_c:.4f}+-{tmi.error:.4f}, variance {var.lambda_c:.4f}+-{var.error:.4f}, "
           f"|diff|/sigma={diff / comb:.2f}")
    assert ok


# ---------------------------------------------------------------- criterion 7
def synthetic_collapse(nu, rng, lam_c=0.5, noise=0.02):
    rows = []
    lams = np.linspace(0.3, 0.7, 11)
    for L in (8, 12, 16, 24):
        x = (lams - lam_c) * L ** (1 / nu)
        s = 0.4 * np.log(L) - 1.2 * np.tanh(x / 6.0) + noise * rng.normal(size=lams.size)
        rows += [(L, l, v, noise) for l, v in zip(lams, s)]
    return rows


@pytest.mark.parametrize("nu", [0.7, 1.0])
def test_c7a_collapse_synthetic(capsys, nu):
    res = data_collapse(synthetic_collapse(nu, np.random.default_rng(SEED + int(100 * nu))), 0.5)
    lo, hi = res.nu_error_band
    ok = lo <= nu <= hi
    report(capsys, "7a", f"collapse recovers planted nu={nu}", ok,
           f"nu={res.nu:.4f}, band=[{lo:.4f}, {hi:.4f}], chi2_min={res.chi2_min:.3f}")
    assert ok


def test_c7b_collapse_clean_data(capsys):
    lam_c = variance_estimate("clean").lambda_c
    rows = [(r.params.L, r.params.lam, r.mean_S, r.stderr_S) for r in results("clean")]
    res = data_collapse(rows, lam_c)
    ok = 0.5 <= res.nu <= 0.9
    report(capsys, "7b", "collapse of the clean sweep gives nu in [0.5, 0.9]", ok,
           f"lambda_c={lam_c:.4f}, nu={res.nu:.4f}, band=[{res.nu_error_band[0]:.4f}, "
           f"{res.nu_error_band[1]:.4f}], chi2_min={res.chi2_min:.3f}")
    assert ok


# ---------------------------------------------------------------- criterion 8
def product_state(p_ups):
    return StateVector.product([np.array([math.sqrt(p), math.sqrt(1 - p)]) for p in p_ups])


def test_c8_measurement_statistics(capsys):
    rng = np.random.default_rng(SEED)
    N = 4000
    state = product_state([0.3, 0.8, 0.5, 0.6])
    lines, ok = [], True

    # pointer mean: E[x] = lambda0 <sigma_z>
    lambda0 = 0.4
    xs = np.array([weak_measure_site(state, 0, lambda0, rng)[1].x for _ in range(N)])
    want = lambda0 * sigma_z_expectation(state, 0)
    z = abs(xs.mean() - want) / (xs.std(ddof=1) / math.sqrt(N))
    ok &= z < 3
    lines.append(f"pointer mean {xs.mean():.4f} vs {want:.4f} ({z:.2f} sigma)")

    # martingale: ensemble mean of <sigma_z> unchanged by a weak measurement, on an entangled state
    amps = rng.normal(size=64) + 1j * rng.normal(size=64)
    ent = StateVector(6, amps / np.linalg.norm(amps))
    before = np.array([sigma_z_expectation(ent, j) for j in range(6)])
    after = []
    for _ in range(N):
        s = ent
        for j in (2, 0, 5):
            s, _ = weak_measure_site(s, j, 0.3, rng)
        after.append([sigma_z_expectation(s, j) for j in range(6)])
    after = np.array(after)
    zs = np.abs(after.mean(0) - before) / (after.std(0, ddof=1) / math.sqrt(N))
    ok &= bool(np.all(zs < 3))
    lines.append(f"martingale max deviation {zs.max():.2f} sigma over 6 sites")

    # Born rule: strong pointer coupling collapses to up with probability p_up
    ups = 0
    for _ in range(N):
        s, _ = weak_measure_site(state, 0, 10.0, rng)
        ups += sigma_z_expectation(s, 0) > 0
    frac = ups / N
    z = abs(frac - 0.3) / math.sqrt(0.3 * 0.7 / N)
    ok &= z < 3
    lines.append(f"collapse fraction {frac:.4f} vs 0.3 ({z:.2f} sigma)")
    report(capsys, 8, f"measurement statistics at 3 sigma with {N} samples", ok, "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- criterion 9
def test_c9_trotter_oracle(capsys):
    rng = np.random.default_rng(SEED)
    L, T = 4, 0.4
    psi = make_neel(L)
    # noise drawn once at the dt = 0.01 amplitude and held fixed
    a = noise_amplitude(XI_R, 0.01)
    disorder = StaticDisorder(np.zeros((L, 3)))
    noise = NoiseStep(rng.uniform(-a, a, size=(L, 3)))
    H = dense_hamiltonian(disorder.h + noise.dh)
    exact = expm(-1j * H * T) @ psi.amplitudes
    errs = []
    for dt in (0.02, 0.01, 0.005):
        s = psi
        for _ in range(int(round(T / dt))):
            s = trotter_step(s, disorder, noise, dt)
        errs.append(np.linalg.norm(s.amplitudes - exact))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ratio_ok = all(3.0 <= r <= 5.0 for r in ratios)

    # single step at dt = 0.01: the noise above, and the field-free chain as the smallest-field case
    step_err = {}
    zero = NoiseStep(np.zeros((L, 3)))
    for label, (dis, nz) in {"frozen noise": (disorder, noise), "no fields": (disorder, zero)}.items():
        Hs = dense_hamiltonian(dis.h + nz.dh)
        ref = expm(-1j * Hs * 0.01) @ psi.amplitudes
        step_err[label] = float(np.linalg.norm(trotter_step(psi, dis, nz, 0.01).amplitudes - ref))
    step_ok = all(e < 1e-6 for e in step_err.values())
    ok = ratio_ok and step_ok
    report(capsys, 9, "Trotter error ratio ~4 under dt halving and per-step error < 1e-6", ok,
           f"global errors {['%.3e' % e for e in errs]}, ratios {['%.3f' % r for r in ratios]} "
           f"({'ok' if ratio_ok else 'out of band'}); per-step errors "
           + ", ".join(f"{k}: {v:.3e}" for k, v in step_err.items())
           + f" ({'ok' if step_ok else 'above 1e-6'})")
    assert ok


# ---------------------------------------------------------------- criterion 10
def density_matrix_entropy(amps, L, sites):
    """Trace the complement out of the full |psi><psi| and diagonalize."""
    rho = np.outer(amps, amps.conj()).reshape((2,) * (2 * L))  # axis k is site L-1-k, ket then bra
    keep = sorted(L - 1 - j for j in sites)
    drop = [k for k in range(L) if k not in keep]
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJ"
    ket = list(letters[:L])
    bra = list(letters[L:2 * L])
    for k in drop:
        bra[k] = ket[k]
    out = "".join(ket[k] for k in keep) + "".join(bra[k] for k in keep)
    red = np.einsum("".join(ket) + "".join(bra) + "->" + out, rho)
    d = 1 << len(keep)
    ev = np.linalg.eigvalsh(red.reshape(d, d))
    ev = ev[ev > 1e-15]
    return float(-np.sum(ev * np.log(ev)))


def density_matrix_tmi(amps, L):
    q = L // 4
    A, B, C = list(range(q)), list(range(q, 2 * q)), list(range(2 * q, 3 * q))
    S = lambda s: density_matrix_entropy(amps, L, s)
    return S(A) + S(B) + S(C) + S(A + B + C) - S(A + B) - S(A + C) - S(B + C)


def test_c10_entropy_oracle(capsys):
    rng = np.random.default_rng(SEED)
    worst_S = worst_I = 0.0
    n_noncontig = 0
    for k in range(100):
        L = (4, 6, 8)[k % 3] if k % 2 else (4, 8)[k % 4 // 2]
        amps = rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L)
        amps /= np.linalg.norm(amps)
        state = StateVector(L, amps)
        size = rng.integers(1, L)
        sites = sorted(rng.choice(L, size=size, replace=False).tolist())
        n_noncontig += any(b - a > 1 for a, b in zip(sites[:-1], sites[1:]))
        worst_S = max(worst_S, abs(entanglement_entropy(state, Partition.from_sites(sites, L))
                                   - density_matrix_entropy(amps, L, sites)))
        # A u C is always non-contiguous in the TMI
        if L % 4 == 0:
            worst_I = max(worst_I, abs(tripartite_mutual_information(state) - density_matrix_tmi(amps, L)))
    ok = worst_S < 1e-10 and worst_I < 1e-10
    report(capsys, 10, "Schmidt route matches density-matrix route on 100 random states", ok,
           f"max entropy diff {worst_S:.2e}, max TMI diff {worst_I:.2e}, "
           f"{n_noncontig} non-contiguous random subsets")
    assert ok


if __name__ == "__main__":
    if "--precompute" not in sys.argv:
        sys.exit(__doc__)
    names = [a for a in sys.argv[1:] if not a.startswith("-")] or list(GRIDS)
    for name in names:
        results(name)
