"""Weak Gaussian measurement of sigma_z on single sites.

A reading ``x`` has density ``P(x) = p_up g(x - l0) + p_down g(x + l0)`` with
``g`` the normal density of variance 1/2, and the conditional update is the
Kraus map ``M_x = phi(x - l0) P_up + phi(x + l0) P_down`` followed by
renormalization, ``phi(x) = pi**-0.25 exp(-x**2 / 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .qstate import StateVector, _check_site


@dataclass(frozen=True)
class MeasurementParams:
    lam: float
    dt: float
    lambda0: float = field(init=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"measurement strength must be >= 0, got {self.lam}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "lambda0", float(np.sqrt(self.dt) * self.lam))


@dataclass(frozen=True)
class MeasurementOutcome:
    site: int
    x: float


def pointer_density(x, p_up: float, lambda0: float):
    """Outcome density ``<psi|M_x^dag M_x|psi>`` for a site with up-probability ``p_up``."""
    x = np.asarray(x, dtype=float)
    g = lambda y: np.exp(-y * y) / np.sqrt(np.pi)
    return p_up * g(x - lambda0) + (1.0 - p_up) * g(x + lambda0)


def collapse_site(state: StateVector, j: int, lambda0: float, u: float, z: float):
    """Measurement update driven by explicit random numbers.

    ``u`` is uniform on [0, 1) and picks the pointer branch, ``z`` is standard
    normal and sets the Gaussian spread.  Returns ``(new_state, x)``.
    """
    j = _check_site(state, j)
    if lambda0 < 0:
        raise ValueError(f"lambda0 must be >= 0, got {lambda0}")
    up, dn = _kernels.bit_weights(state.amplitudes, j)
    total = up + dn
    if not (total > 0.0) or not np.isfinite(total):
        raise FloatingPointError("degenerate state: zero or non-finite norm before measurement")
    x, f_up, f_dn = _kernels.kraus_factors(up / total, lambda0, u, z)
    down = (np.arange(state.dim) >> j) & 1 == 1
    factors = np.where(down, f_dn, f_up)
    out = state.amplitudes * factors
    out /= np.linalg.norm(out)
    return StateVector(state.num_sites, out), float(x)


def weak_measure_site(state: StateVector, j: int, lambda0: float, rng: np.random.Generator):
    """Sample one weak sigma_z reading on site ``j``; returns ``(state, outcome)``."""
    u = rng.random()
    z = rng.standard_normal()
    new, x = collapse_site(state, j, lambda0, u, z)
    return new, MeasurementOutcome(int(j), x)


def measure_layer(state: StateVector, lambda0: float, rng: np.random.Generator):
    """Measure every site in ascending order; returns ``(state, outcomes)``."""
    outcomes = []
    for j in range(state.num_sites):
        state, outcome = weak_measure_site(state, j, lambda0, rng)
        outcomes.append(outcome)
    return state, outcomes
