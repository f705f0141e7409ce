"""Quantum trajectories of the monitored chain and ensemble statistics."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import __version__, _kernels
from .entanglement import half_chain_entropy, tripartite_mutual_information
from .evolution import (
    HEISENBERG_BOND,
    MAX_DT,
    _SIG_LEFT,
    _SIG_RIGHT,
    StaticDisorder,
    bond_sites,
    noise_amplitude,
    sample_static_disorder,
)
from .qstate import StateVector, make_neel

log = logging.getLogger(__name__)

MIN_BURN = 20.0
MAX_DEFAULT_BURN = 100.0


def default_burn_in(lam: float, t_max: Optional[float] = None) -> float:
    """``max(20, 10/lam^2)``, capped at ``t_max / 2`` (or at 100 when no ``t_max`` is given)."""
    burn = max(MIN_BURN, 10.0 / lam**2) if lam > 0 else math.inf
    cap = 0.5 * t_max if t_max is not None else MAX_DEFAULT_BURN
    return float(min(burn, cap))


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical parameters for one ensemble of trajectories.

    Times are in units of hbar/J.  ``t_burn`` and ``t_max`` are filled in
    from the defaults when left as ``None``.
    """

    L: int
    xi_r: float
    xi_s: float
    lam: float
    dt: float = 0.01
    t_max: Optional[float] = None
    t_burn: Optional[float] = None
    sample_interval: float = 1.0
    n_steady_samples: int = 100
    master_seed: int = 0
    n_realizations: int = 100
    record_tmi: bool = False

    def __post_init__(self):
        if self.L < 2 or self.L % 2:
            raise ValueError(f"L must be even and >= 2, got {self.L}")
        if self.record_tmi and self.L % 4:
            raise ValueError(f"TMI needs L divisible by 4, got {self.L}")
        if min(self.xi_r, self.xi_s, self.lam) < 0:
            raise ValueError("xi_r, xi_s and lambda must be non-negative")
        if not 0 < self.dt <= MAX_DT:
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if self.sample_interval <= 0 or self.n_steady_samples < 1:
            raise ValueError("sample_interval and n_steady_samples must be positive")
        ratio = self.sample_interval / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ValueError(f"dt={self.dt} does not divide sample_interval={self.sample_interval}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        t_burn = self.t_burn if self.t_burn is not None else default_burn_in(self.lam, self.t_max)
        t_max = self.t_max
        if t_max is None:
            t_max = t_burn + (self.n_steady_samples + 1) * self.sample_interval
        object.__setattr__(self, "t_burn", float(t_burn))
        object.__setattr__(self, "t_max", float(t_max))
        need = self.t_burn + self.n_steady_samples * self.sample_interval
        if need > self.t_max + 1e-9:
            raise ValueError(
                f"t_burn + n_steady_samples * sample_interval = {need} exceeds t_max = {self.t_max}"
            )

    @property
    def lambda0(self) -> float:
        return math.sqrt(self.dt) * self.lam

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.sample_interval / self.dt))

    @property
    def n_samples(self) -> int:
        """Number of recorded sample times after t = 0."""
        return int(math.floor(self.t_max / self.sample_interval + 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def config_hash(self) -> str:
        blob = json.dumps({"params": self.to_dict(), "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


def point_seed(master_seed: int, *key) -> int:
    """64-bit seed for one grid point, derived from the master seed and the point coordinates."""
    blob = json.dumps([int(master_seed), [repr(float(k)) for k in key]])
    digest = hashlib.sha256(blob.encode()).digest()
    return int.from_bytes(digest[:8], "little")


class TrajectoryAborted(RuntimeError):
    pass


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    entropy: np.ndarray
    tmi: Optional[np.ndarray]
    realization_seed: tuple
    disorder: StaticDisorder


class Trajectory:
    """One stochastic realization; iterating yields ``(t, state)`` at each sample time.

    The yielded state is live and gets overwritten by the next chunk of
    steps, so copy it if it has to outlive the loop body.
    """

    def __init__(self, params: SimParams, realization_index: int):
        self.params = params
        self.index = realization_index
        self.rng = realization_rng(params.master_seed, realization_index)
        self.disorder = sample_static_disorder(params.xi_s, params.L, self.rng)

    def __iter__(self) -> Iterator[tuple[float, StateVector]]:
        p = self.params
        L = p.L
        rng = self.rng
        a = noise_amplitude(p.xi_r, p.dt)
        even_sites, odd_sites = bond_sites(L)
        n = p.steps_per_sample
        state = make_neel(L)
        psi = state.amplitudes
        x_buf = np.empty((n, L))
        gates_even = np.empty((n, L // 2, 4, 4), dtype=np.complex128)
        gates_odd = np.empty_like(gates_even)
        heis = HEISENBERG_BOND.astype(np.complex128)
        yield 0.0, state
        for k in range(1, p.n_samples + 1):
            noise = rng.uniform(-a, a, size=(n, L, 3))
            u = rng.random((n, L))
            z = rng.standard_normal((n, L))
            _kernels.step_gates(self.disorder.h + noise, p.dt, _SIG_LEFT, _SIG_RIGHT, heis,
                                gates_even, gates_odd)
            if not (np.all(np.isfinite(gates_even)) and np.all(np.isfinite(gates_odd))):
                raise TrajectoryAborted(self._where("non-finite gate", (k - 1) * p.sample_interval))
            done = _kernels.evolve_chunk(psi, L, gates_even, gates_odd, even_sites, odd_sites,
                                         p.lambda0, u, z, x_buf)
            if done < n or not np.all(np.isfinite(psi)):
                t_fail = (k - 1) * p.sample_interval + done * p.dt
                raise TrajectoryAborted(self._where("degenerate or NaN state", t_fail))
            yield k * p.sample_interval, state

    def _where(self, what: str, t: float) -> str:
        return f"{what} at t={t:g} (realization {self.index}, {self.params})"


def run_trajectory(params: SimParams, realization_index: int) -> TrajectoryRecord:
    """Néel start, one disorder draw, then (noise, Trotter step, measurement layer) per dt."""
    traj = Trajectory(params, realization_index)
    times, entropy, tmi = [], [], []
    for t, state in traj:
        times.append(t)
        entropy.append(half_chain_entropy(state))
        if params.record_tmi:
            tmi.append(tripartite_mutual_information(state))
    return TrajectoryRecord(
        times=np.asarray(times),
        entropy=np.asarray(entropy),
        tmi=np.asarray(tmi) if params.record_tmi else None,
        realization_seed=(params.master_seed, realization_index),
        disorder=traj.disorder,
    )


def steady_state_mean(record: TrajectoryRecord, params: SimParams, observable: str = "entropy") -> float:
    """Mean of ``n_steady_samples`` samples spaced ``sample_interval`` apart, from ``t_burn`` on."""
    series = record.entropy if observable == "entropy" else record.tmi
    if series is None:
        raise ValueError(f"record has no {observable} series")
    start = int(np.searchsorted(record.times, params.t_burn - 1e-9 * params.sample_interval))
    window = series[start:start + params.n_steady_samples]
    if window.shape[0] < params.n_steady_samples:
        raise ValueError(
            f"only {window.shape[0]} samples after t_burn={params.t_burn}, "
            f"need {params.n_steady_samples}"
        )
    return float(np.mean(window))


def variance_stderr(values: np.ndarray) -> float:
    """Standard error of the unbiased sample variance from the fourth central moment."""
    n = values.shape[0]
    if n < 4:
        return math.inf
    d = values - values.mean()
    m4 = np.mean(d**4)
    s2 = np.var(values, ddof=1)
    v = m4 / n - s2 * s2 * (n - 3) / (n * (n - 1))
    return float(math.sqrt(max(v, 0.0)))


@dataclass
class EnsembleResult:
    params: SimParams
    n_effective: int
    mean_S: float
    stderr_S: float
    var_S: float
    stderr_var: float
    mean_tmi: Optional[float] = None
    stderr_tmi: Optional[float] = None
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    mean_curve: np.ndarray = field(default_factory=lambda: np.empty(0))
    stderr_curve: np.ndarray = field(default_factory=lambda: np.empty(0))
    aborted: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "n_effective": self.n_effective,
            "mean_S": self.mean_S,
            "stderr_S": self.stderr_S,
            "var_S": self.var_S,
            "stderr_var": self.stderr_var,
            "mean_tmi": self.mean_tmi,
            "stderr_tmi": self.stderr_tmi,
            "times": self.times.tolist(),
            "mean_curve": self.mean_curve.tolist(),
            "stderr_curve": self.stderr_curve.tolist(),
            "aborted": list(self.aborted),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleResult":
        d = dict(d)
        d["params"] = SimParams.from_dict(d["params"])
        for key in ("times", "mean_curve", "stderr_curve"):
            d[key] = np.asarray(d.get(key, []), dtype=float)
        return cls(**d)


def _std_error(a: np.ndarray, axis=0):
    n = a.shape[axis]
    return np.std(a, axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.full(np.shape(a.mean(axis=axis)), np.inf)


def default_threads() -> int:
    return max(1, int(os.environ.get("MIPT_THREADS", "1")))


def run_ensemble(params: SimParams, threads: Optional[int] = None) -> EnsembleResult:
    """Run ``n_realizations`` trajectories and reduce them to steady-state statistics.

    Aborted realizations are logged and excluded; ``n_effective`` counts the
    survivors.
    """
    if params.n_realizations < 2:
        raise ValueError("an ensemble needs at least 2 realizations")
    threads = threads or default_threads()

    def work(i):
        try:
            return run_trajectory(params, i)
        except TrajectoryAborted as exc:
            log.warning("realization aborted: %s", exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(work, range(params.n_realizations)))
    else:
        records = [work(i) for i in range(params.n_realizations)]

    aborted = [i for i, r in enumerate(records) if r is None]
    good = [r for r in records if r is not None]
    if len(good) < 2:
        raise RuntimeError(f"only {len(good)} realizations survived for {params}")
    means = np.array([steady_state_mean(r, params) for r in good])
    curves = np.stack([r.entropy for r in good])
    result = EnsembleResult(
        params=params,
        n_effective=len(good),
        mean_S=float(means.mean()),
        stderr_S=float(_std_error(means)),
        var_S=float(np.var(means, ddof=1)),
        stderr_var=variance_stderr(means),
        times=good[0].times.copy(),
        mean_curve=curves.mean(axis=0),
        stderr_curve=_std_error(curves),
        aborted=aborted,
    )
    if params.record_tmi:
        tmis = np.array([steady_state_mean(r, params, "tmi") for r in good])
        result.mean_tmi = float(tmis.mean())
        result.stderr_tmi = float(_std_error(tmis))
    return result


def load_checkpoint(path) -> dict[str, EnsembleResult]:
    """Completed grid points keyed by config hash; a torn final line is ignored."""
    done = {}
    path = Path(path)
    if not path.exists():
        return done
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                log.warning("skipping unreadable checkpoint line in %s", path)
                continue
            done[rec["hash"]] = EnsembleResult.from_dict(rec["result"])
    return done


def append_checkpoint(path, result: EnsembleResult) -> None:
    rec = {"hash": result.params.config_hash(), "result": result.to_dict()}
    path = Path(path)
    torn = False
    if path.exists() and path.stat().st_size:
        with path.open("rb") as fh:
            fh.seek(-1, os.SEEK_END)
            torn = fh.read(1) != b"\n"
    with path.open("a") as fh:
        # a partial line left by an interrupted write must not swallow this record
        fh.write(("\n" if torn else "") + json.dumps(rec) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def sweep(grid: Sequence[SimParams], checkpoint=None, threads: Optional[int] = None,
          progress=None) -> list[EnsembleResult]:
    """Run an ensemble per grid point, in order.

    With a ``checkpoint`` path every finished point is appended as one JSON
    line, and points already present (matched by config hash) are reused, so
    an interrupted sweep loses at most the point in flight.
    """
    done = load_checkpoint(checkpoint) if checkpoint is not None else {}
    results = []
    for k, params in enumerate(grid):
        key = params.config_hash()
        if key in done:
            res = done[key]
        else:
            res = run_ensemble(params, threads)
            if checkpoint is not None:
                append_checkpoint(checkpoint, res)
            done[key] = res
        if progress is not None:
            progress(k, len(grid), res)
        results.append(res)
    return results
