"""Dense pure states of a spin-1/2 chain and elementary operations on them.

Basis index ``b`` stores the spin of site ``j`` in bit ``j``; a clear bit is
spin up (sigma_z = +1) and a set bit is spin down (sigma_z = -1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

NORM_TOL = 1e-10


@dataclass
class StateVector:
    """Pure state of ``num_sites`` spins stored as ``2**num_sites`` amplitudes."""

    num_sites: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.num_sites < 2:
            raise ValueError(f"need at least 2 sites, got {self.num_sites}")
        amps = np.ascontiguousarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (1 << self.num_sites,):
            raise ValueError(
                f"expected {1 << self.num_sites} amplitudes for L={self.num_sites}, "
                f"got shape {amps.shape}"
            )
        self.amplitudes = amps

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.num_sites, self.amplitudes.copy())

    def normalized(self) -> "StateVector":
        nrm = self.norm()
        if not np.isfinite(nrm) or nrm == 0.0:
            raise FloatingPointError("cannot normalize a zero or non-finite state")
        return StateVector(self.num_sites, self.amplitudes / nrm)

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = True) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=np.complex128).ravel()
        num_sites = int(round(np.log2(amps.shape[0])))
        state = cls(num_sites, amps.copy())
        return state.normalized() if normalize else state

    @classmethod
    def product(cls, site_states) -> "StateVector":
        """Product state from a list of single-site 2-vectors ``(up, down)``, site 0 first."""
        amps = np.ones(1, dtype=np.complex128)
        for v in site_states:
            # site j is bit j, so later sites are more significant
            amps = np.kron(np.asarray(v, dtype=np.complex128), amps)
        return cls.from_amplitudes(amps)


@dataclass(frozen=True)
class Gate4:
    """Two-site unitary in the local basis ``k = 2 * bit_i + bit_j``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        if m.shape != (4, 4):
            raise ValueError(f"gate must be 4x4, got {m.shape}")
        if not np.allclose(m.conj().T @ m, np.eye(4), atol=NORM_TOL, rtol=0.0):
            raise ValueError("gate matrix is not unitary")
        object.__setattr__(self, "matrix", m)


def _check_site(state: StateVector, j: int) -> int:
    if not 0 <= j < state.num_sites:
        raise IndexError(f"site {j} out of range for L={state.num_sites}")
    return int(j)


def basis_index(spins) -> int:
    """Index of the computational basis state with the given bits (site 0 first)."""
    return sum(int(s) << j for j, s in enumerate(spins))


def make_neel(L: int) -> StateVector:
    """The alternating product state up, down, up, down, ..."""
    if L < 2 or L % 2:
        raise ValueError(f"Neel state needs an even L >= 2, got {L}")
    amps = np.zeros(1 << L, dtype=np.complex128)
    amps[basis_index([j % 2 for j in range(L)])] = 1.0
    return StateVector(L, amps)


def apply_two_site_gate(state: StateVector, gate: Gate4 | np.ndarray, i: int, j: int) -> StateVector:
    """Return ``gate`` applied to sites ``(i, j)``; ``i`` is the more significant local bit."""
    i = _check_site(state, i)
    j = _check_site(state, j)
    if i == j:
        raise ValueError("gate sites must differ")
    matrix = gate.matrix if isinstance(gate, Gate4) else np.ascontiguousarray(gate, dtype=np.complex128)
    out = state.amplitudes.copy()
    _kernels.apply_gate(out, matrix, i, j)
    return StateVector(state.num_sites, out)


def sigma_z_expectation(state: StateVector, j: int) -> float:
    j = _check_site(state, j)
    up, dn = _kernels.bit_weights(state.amplitudes, j)
    return float(up - dn)


def up_probability(state: StateVector, j: int) -> float:
    return 0.5 * (1.0 + sigma_z_expectation(state, j))


def magnetization(state: StateVector) -> float:
    """Total sum_j <sigma_z^j>."""
    return sum(sigma_z_expectation(state, j) for j in range(state.num_sites))
