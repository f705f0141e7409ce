"""Trotterized unitary dynamics of the noisy, disordered Heisenberg ring.

The ring Hamiltonian is split into even bonds ``(0,1), (2,3), ...`` and odd
bonds ``(1,2), ..., (L-1,0)``.  Each site field is shared equally between
the two bonds that touch it, and one time step is the symmetric product
``E(dt/2) O(dt) E(dt/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .qstate import Gate4, StateVector

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=np.complex128,
)
_EYE2 = np.eye(2, dtype=np.complex128)
# sigma_alpha on the first (more significant) / second site of a bond
_SIG_LEFT = np.stack([np.kron(p, _EYE2) for p in PAULI])
_SIG_RIGHT = np.stack([np.kron(_EYE2, p) for p in PAULI])
HEISENBERG_BOND = sum(np.kron(p, p) for p in PAULI)

MAX_DT = 0.05


@dataclass(frozen=True)
class StaticDisorder:
    """Static field ``h[j, alpha]`` in units of J."""

    h: np.ndarray


@dataclass(frozen=True)
class NoiseStep:
    """Temporal field fluctuation ``dh[j, alpha]`` for one time step."""

    dh: np.ndarray


@dataclass(frozen=True)
class EvolutionParams:
    L: int
    xi_r: float = 0.0
    xi_s: float = 0.0
    dt: float = 0.01

    def __post_init__(self):
        if self.L < 2 or self.L % 2:
            raise ValueError(f"L must be even and >= 2, got {self.L}")
        if self.xi_r < 0 or self.xi_s < 0:
            raise ValueError("noise and disorder strengths must be non-negative")
        if not 0 < self.dt <= MAX_DT:
            raise ValueError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")


def sample_static_disorder(xi_s: float, L: int, rng: np.random.Generator) -> StaticDisorder:
    if xi_s < 0:
        raise ValueError(f"disorder strength must be >= 0, got {xi_s}")
    return StaticDisorder(rng.uniform(-xi_s, xi_s, size=(L, 3)))


def noise_amplitude(xi_r: float, dt: float) -> float:
    """Half-width of the uniform noise distribution, ``xi_r / sqrt(dt)``."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if xi_r < 0:
        raise ValueError(f"noise strength must be >= 0, got {xi_r}")
    return xi_r / np.sqrt(dt)


def sample_noise_step(xi_r: float, dt: float, L: int, rng: np.random.Generator) -> NoiseStep:
    a = noise_amplitude(xi_r, dt)
    return NoiseStep(rng.uniform(-a, a, size=(L, 3)))


def bond_generators(h_left: np.ndarray, h_right: np.ndarray) -> np.ndarray:
    """Two-site generators ``s.s + h_left.s x 1 + 1 x h_right.s``, batched over leading axes."""
    h_left = np.asarray(h_left, dtype=float)
    h_right = np.asarray(h_right, dtype=float)
    return (
        HEISENBERG_BOND
        + np.einsum("...a,aij->...ij", h_left, _SIG_LEFT)
        + np.einsum("...a,aij->...ij", h_right, _SIG_RIGHT)
    )


def bond_unitaries(h_left: np.ndarray, h_right: np.ndarray, tau: float) -> np.ndarray:
    """``exp(-i tau H2)`` for every bond in the batch, via Hermitian eigendecomposition."""
    w, v = np.linalg.eigh(bond_generators(h_left, h_right))
    phases = np.exp(-1j * tau * w)
    return np.einsum("...ik,...k,...jk->...ij", v, phases, v.conj())


def build_bond_gate(h_left, h_right, tau: float) -> Gate4:
    h_left = np.asarray(h_left, dtype=float)
    h_right = np.asarray(h_right, dtype=float)
    if h_left.shape != (3,) or h_right.shape != (3,):
        raise ValueError("bond fields must be 3-vectors")
    if not (np.all(np.isfinite(h_left)) and np.all(np.isfinite(h_right)) and np.isfinite(tau)):
        raise FloatingPointError("non-finite field or time step")
    return Gate4(bond_unitaries(h_left, h_right, tau))


def bond_sites(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Site pairs of the even and odd bond layers (periodic boundary)."""
    if L < 2 or L % 2:
        raise ValueError(f"L must be even, got {L}")
    even = np.array([(j, (j + 1) % L) for j in range(0, L, 2)], dtype=np.int64)
    odd = np.array([(j, (j + 1) % L) for j in range(1, L, 2)], dtype=np.int64)
    return even, odd


def step_gates(fields: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Gate stacks for the even half-step and the odd full step.

    ``fields`` has shape ``(..., L, 3)`` holding total site fields (static plus
    noise); the result has shape ``(..., L/2, 4, 4)`` for each layer.
    """
    half = 0.5 * fields
    right = np.roll(half, -1, axis=-2)  # field of site j+1 at position j
    even = bond_unitaries(half[..., 0::2, :], right[..., 0::2, :], 0.5 * dt)
    odd = bond_unitaries(half[..., 1::2, :], right[..., 1::2, :], dt)
    return np.ascontiguousarray(even), np.ascontiguousarray(odd)


def trotter_step(state: StateVector, disorder: StaticDisorder, noise: NoiseStep, dt: float) -> StateVector:
    """One symmetric second-order step ``E(dt/2) O(dt) E(dt/2)``; returns a new state."""
    L = state.num_sites
    if L % 2:
        raise ValueError(f"Trotter step needs an even number of sites, got {L}")
    fields = np.asarray(disorder.h, dtype=float) + np.asarray(noise.dh, dtype=float)
    if fields.shape != (L, 3):
        raise ValueError(f"fields must have shape ({L}, 3), got {fields.shape}")
    if not np.all(np.isfinite(fields)):
        raise FloatingPointError("non-finite field values")
    even_gates, odd_gates = step_gates(fields, dt)
    even_sites, odd_sites = bond_sites(L)
    psi = state.amplitudes.copy()
    _kernels.apply_layer(psi, even_gates, even_sites)
    _kernels.apply_layer(psi, odd_gates, odd_sites)
    _kernels.apply_layer(psi, even_gates, even_sites)
    return StateVector(L, psi)


def dense_hamiltonian(fields: np.ndarray) -> np.ndarray:
    """Full ``2^L x 2^L`` ring Hamiltonian for total site fields ``(L, 3)``.

    Intended for small-L reference calculations only.
    """
    fields = np.asarray(fields, dtype=float)
    L = fields.shape[0]

    def site_op(op, j):
        # site j is bit j: kron from the most significant site down
        out = np.ones((1, 1), dtype=np.complex128)
        for k in reversed(range(L)):
            out = np.kron(out, op if k == j else _EYE2)
        return out

    sig = [[site_op(p, j) for p in PAULI] for j in range(L)]
    H = np.zeros((1 << L, 1 << L), dtype=np.complex128)
    for j in range(L):
        k = (j + 1) % L
        for a in range(3):
            H += sig[j][a] @ sig[k][a]
            H += fields[j, a] * sig[j][a]
    return H
