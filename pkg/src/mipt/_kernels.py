"""Compiled inner loops for the state-vector simulator.

All kernels work in place on a flat complex128 amplitude array in which
bit ``j`` of the basis index is the spin on site ``j`` (0 = up, 1 = down).
A two-site gate on sites ``(i, j)`` is a 4x4 matrix in the local basis
``k = 2 * bit_i + bit_j``.
"""

import numpy as np
from numba import njit

TINY = 1e-280


@njit(cache=True, nogil=True, fastmath=True)
def apply_gate(psi, g, i, j):
    lo = min(i, j)
    hi = max(i, j)
    bi = 1 << i
    bj = 1 << j
    g00 = g[0, 0]; g01 = g[0, 1]; g02 = g[0, 2]; g03 = g[0, 3]
    g10 = g[1, 0]; g11 = g[1, 1]; g12 = g[1, 2]; g13 = g[1, 3]
    g20 = g[2, 0]; g21 = g[2, 1]; g22 = g[2, 2]; g23 = g[2, 3]
    g30 = g[3, 0]; g31 = g[3, 1]; g32 = g[3, 2]; g33 = g[3, 3]
    slo = 1 << lo
    shi = 1 << hi
    n = psi.shape[0]
    for top in range(0, n, 2 * shi):
        for mid in range(top, top + shi, 2 * slo):
            for i0 in range(mid, mid + slo):
                i1 = i0 + bj
                i2 = i0 + bi
                i3 = i2 + bj
                a0 = psi[i0]; a1 = psi[i1]; a2 = psi[i2]; a3 = psi[i3]
                psi[i0] = g00 * a0 + g01 * a1 + g02 * a2 + g03 * a3
                psi[i1] = g10 * a0 + g11 * a1 + g12 * a2 + g13 * a3
                psi[i2] = g20 * a0 + g21 * a1 + g22 * a2 + g23 * a3
                psi[i3] = g30 * a0 + g31 * a1 + g32 * a2 + g33 * a3


@njit(cache=True, nogil=True)
def apply_layer(psi, gates, sites):
    for b in range(sites.shape[0]):
        apply_gate(psi, gates[b], sites[b, 0], sites[b, 1])


@njit(cache=True, nogil=True)
def bit_weights(psi, j):
    """Return (sum |psi|^2 over bit j = 0, same over bit j = 1)."""
    bj = 1 << j
    up = 0.0
    dn = 0.0
    for b in range(psi.shape[0]):
        w = psi[b].real * psi[b].real + psi[b].imag * psi[b].imag
        if b & bj:
            dn += w
        else:
            up += w
    return up, dn


@njit(cache=True, nogil=True)
def kraus_factors(p_up, lambda0, u, z):
    """Sample a pointer reading and return (x, up factor, down factor).

    The factors already include the 1/sqrt(P(x)) normalization so that the
    post-measurement state has unit norm when ``p_up + p_down = 1``.
    """
    if u < p_up:
        x = lambda0 + z / np.sqrt(2.0)
    else:
        x = -lambda0 + z / np.sqrt(2.0)
    arg = x * lambda0
    c = abs(arg)
    f_up = np.exp(arg - c)
    f_dn = np.exp(-arg - c)
    norm2 = p_up * f_up * f_up + (1.0 - p_up) * f_dn * f_dn
    s = 1.0 / np.sqrt(norm2)
    return x, f_up * s, f_dn * s


@njit(cache=True, nogil=True)
def measure_layer(psi, num_sites, lambda0, u, z, out_x):
    """Weakly measure sites 0..L-1 in order; returns False on a degenerate state.

    All Kraus operators are real diagonal, so the whole layer is sampled from
    prefix marginals of |psi|^2: site j only needs the distribution of bits
    0..j weighted by the squared factors already chosen for bits < j.  The
    state itself is touched once, with the accumulated diagonal.
    """
    n = psi.shape[0]
    # marg[2^k + c] = probability of bits 0..k-1 equal to c
    marg = np.empty(2 * n)
    for b in range(n):
        marg[n + b] = psi[b].real * psi[b].real + psi[b].imag * psi[b].imag
    k = n
    while k > 1:
        h = k >> 1
        for c in range(h):
            marg[h + c] = marg[k + c] + marg[k + h + c]
        k = h
    d = np.empty(n)
    d[0] = 1.0
    size = 1
    for j in range(num_sites):
        up = 0.0
        dn = 0.0
        base = 2 * size
        for c in range(size):
            w = d[c] * d[c]
            up += marg[base + c] * w
            dn += marg[base + size + c] * w
        total = up + dn
        if not (total > 0.0) or not np.isfinite(total):
            return False
        x, f_up, f_dn = kraus_factors(up / total, lambda0, u[j], z[j])
        out_x[j] = x
        s = 1.0 / np.sqrt(total)
        for c in range(size):
            d[size + c] = d[c] * f_dn * s
            d[c] = d[c] * f_up * s
        size *= 2
    norm = 0.0
    for b in range(n):
        a = psi[b] * d[b]
        w = a.real * a.real + a.imag * a.imag
        if w < TINY:
            # flush to zero before the amplitude drifts into subnormal range
            a = 0.0
            w = 0.0
        psi[b] = a
        norm += w
    if not (norm > 0.0) or not np.isfinite(norm):
        return False
    s = 1.0 / np.sqrt(norm)
    for b in range(n):
        psi[b] *= s
    return True


@njit(cache=True, nogil=True)
def evolve_chunk(psi, num_sites, gates_even, gates_odd, even_sites, odd_sites,
                 lambda0, u, z, out_x):
    """Run ``gates_even.shape[0]`` full time steps (unitary, then measurement).

    Returns the number of completed steps; anything short of the chunk
    length means the state became degenerate or non-finite.
    """
    nsteps = gates_even.shape[0]
    for s in range(nsteps):
        apply_layer(psi, gates_even[s], even_sites)
        apply_layer(psi, gates_odd[s], odd_sites)
        apply_layer(psi, gates_even[s], even_sites)
        if lambda0 > 0.0:
            if not measure_layer(psi, num_sites, lambda0, u[s], z[s], out_x[s]):
                return s
        else:
            for j in range(num_sites):
                out_x[s, j] = z[s, j] / np.sqrt(2.0)
        if not np.isfinite(psi[0].real):
            return s
    return nsteps


@njit(cache=True, nogil=True)
def jacobi_eigh4(a, w, v):
    """Eigendecomposition of a 4x4 Hermitian matrix by cyclic complex Jacobi rotations.

    ``a`` is overwritten; eigenvalues go to ``w`` and eigenvectors to the
    columns of ``v`` so that ``A = v diag(w) v^dag``.
    """
    for r in range(4):
        for c in range(4):
            v[r, c] = 1.0 if r == c else 0.0
    scale = 0.0
    for r in range(4):
        for c in range(4):
            scale += a[r, c].real ** 2 + a[r, c].imag ** 2
    tol = 1e-32 * max(scale, 1e-300)
    for _ in range(50):
        off = 0.0
        for p in range(3):
            for q in range(p + 1, 4):
                off += a[p, q].real ** 2 + a[p, q].imag ** 2
        if off <= tol:
            break
        for p in range(3):
            for q in range(p + 1, 4):
                apq = a[p, q]
                mag = abs(apq)
                if mag * mag <= 1e-36 * scale:
                    continue
                ph = apq / mag  # e^{i phi}
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * mag)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                gpp = c
                gpq = s
                gqp = -s * ph.conjugate()
                gqq = c * ph.conjugate()
                for k in range(4):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = akp * gpp + akq * gqp
                    a[k, q] = akp * gpq + akq * gqq
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = vkp * gpp + vkq * gqp
                    v[k, q] = vkp * gpq + vkq * gqq
                for k in range(4):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = gpp * apk + gqp.conjugate() * aqk
                    a[q, k] = gpq * apk + gqq.conjugate() * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
    for r in range(4):
        w[r] = a[r, r].real


@njit(cache=True, nogil=True)
def bond_unitary(h2, tau, out, w, v):
    """``out = exp(-i tau h2)`` for a Hermitian 4x4 ``h2`` (which is overwritten)."""
    jacobi_eigh4(h2, w, v)
    ph0 = np.exp(-1j * tau * w[0])
    ph1 = np.exp(-1j * tau * w[1])
    ph2 = np.exp(-1j * tau * w[2])
    ph3 = np.exp(-1j * tau * w[3])
    for r in range(4):
        x0 = v[r, 0] * ph0
        x1 = v[r, 1] * ph1
        x2 = v[r, 2] * ph2
        x3 = v[r, 3] * ph3
        for c in range(4):
            out[r, c] = (x0 * v[c, 0].conjugate() + x1 * v[c, 1].conjugate()
                         + x2 * v[c, 2].conjugate() + x3 * v[c, 3].conjugate())


@njit(cache=True, nogil=True)
def step_gates(fields, dt, sig_left, sig_right, heis, gates_even, gates_odd):
    """Fill the even (tau = dt/2) and odd (tau = dt) bond gates for a chunk of steps.

    ``fields`` has shape (n, L, 3) with total site fields; bond (j, j+1)
    carries half of each site field.
    """
    n = fields.shape[0]
    L = fields.shape[1]
    h2 = np.empty((4, 4), dtype=np.complex128)
    w = np.empty(4)
    v = np.empty((4, 4), dtype=np.complex128)
    for s in range(n):
        for j in range(L):
            k = (j + 1) % L
            for r in range(4):
                for c in range(4):
                    acc = heis[r, c]
                    for al in range(3):
                        acc += 0.5 * fields[s, j, al] * sig_left[al, r, c]
                        acc += 0.5 * fields[s, k, al] * sig_right[al, r, c]
                    h2[r, c] = acc
            if j % 2 == 0:
                bond_unitary(h2, 0.5 * dt, gates_even[s, j // 2], w, v)
            else:
                bond_unitary(h2, dt, gates_odd[s, j // 2], w, v)
