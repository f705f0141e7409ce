"""Von Neumann entanglement entropy and tripartite mutual information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qstate import StateVector

SCHMIDT_CUTOFF = 1e-12


@dataclass(frozen=True)
class Partition:
    """Subsystem A given as a bitmask over sites (bit j set = site j in A)."""

    subset: int
    num_sites: int

    def __post_init__(self):
        full = (1 << self.num_sites) - 1
        if not 0 < self.subset < full:
            raise ValueError("subsystem must be a nonempty proper subset of the sites")

    @classmethod
    def from_sites(cls, sites, num_sites: int) -> "Partition":
        mask = 0
        for j in sites:
            if not 0 <= j < num_sites:
                raise IndexError(f"site {j} out of range for L={num_sites}")
            mask |= 1 << int(j)
        return cls(mask, num_sites)

    @property
    def sites(self) -> list[int]:
        return [j for j in range(self.num_sites) if self.subset >> j & 1]

    def complement(self) -> "Partition":
        return Partition(((1 << self.num_sites) - 1) ^ self.subset, self.num_sites)


def half_chain(L: int) -> Partition:
    return Partition((1 << (L // 2)) - 1, L)


def schmidt_values(state: StateVector, partition: Partition) -> np.ndarray:
    L = state.num_sites
    if partition.num_sites != L:
        raise ValueError("partition and state disagree on the number of sites")
    a_sites = partition.sites
    b_sites = partition.complement().sites
    # tensor axis k holds site L-1-k in C order
    tensor = state.amplitudes.reshape((2,) * L)
    axes = [L - 1 - j for j in a_sites] + [L - 1 - j for j in b_sites]
    mat = tensor.transpose(axes).reshape(1 << len(a_sites), 1 << len(b_sites))
    return np.linalg.svd(mat, compute_uv=False)


def entropy_from_schmidt(s: np.ndarray) -> float:
    s = s[s > SCHMIDT_CUTOFF]
    p = s * s
    return float(-np.sum(p * np.log(p)))


def entanglement_entropy(state: StateVector, partition: Partition) -> float:
    """``-tr rho_A ln rho_A`` from the singular values of the A|B reshaping."""
    return max(entropy_from_schmidt(schmidt_values(state, partition)), 0.0)


def half_chain_entropy(state: StateVector) -> float:
    L = state.num_sites
    # sites [0, L/2) are the low bits, so a plain reshape already separates them
    mat = state.amplitudes.reshape(1 << (L - L // 2), 1 << (L // 2))
    return max(entropy_from_schmidt(np.linalg.svd(mat, compute_uv=False)), 0.0)


def page_entropy(L: int) -> float:
    """Mean half-chain entropy of a random pure state, ``(L/2) ln 2 - 1/2``."""
    if L < 2 or L % 2:
        raise ValueError(f"L must be even, got {L}")
    return 0.5 * L * np.log(2.0) - 0.5


def tripartite_mutual_information(state: StateVector) -> float:
    """I3 of the adjacent quarter-chains A = [0, L/4), B = [L/4, L/2), C = [L/2, 3L/4)."""
    L = state.num_sites
    if L % 4:
        raise ValueError(f"L must be divisible by 4, got {L}")
    q = L // 4
    a = ((1 << q) - 1)
    b = a << q
    c = a << (2 * q)

    def S(mask):
        return entanglement_entropy(state, Partition(mask, L))

    return S(a) + S(b) + S(c) + S(a | b | c) - S(a | b) - S(a | c) - S(b | c)
