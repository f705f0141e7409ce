import numpy as np
import pytest

from mipt.qstate import StateVector


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_state(L, rng):
    amps = rng.standard_normal(1 << L) + 1j * rng.standard_normal(1 << L)
    return StateVector.from_amplitudes(amps)


def random_unitary(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def dense_two_site(gate, i, j, L):
    """Full 2^L operator for a gate on (i, j), built from explicit basis bookkeeping."""
    dim = 1 << L
    U = np.zeros((dim, dim), dtype=complex)
    for b in range(dim):
        bi = (b >> i) & 1
        bj = (b >> j) & 1
        col = 2 * bi + bj
        rest = b & ~((1 << i) | (1 << j))
        for row in range(4):
            out = rest | ((row >> 1) << i) | ((row & 1) << j)
            U[out, b] += gate[row, col]
    return U
