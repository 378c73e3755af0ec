"""Pure-numpy selective-scan kernels (reference and fallback backend).

Shapes: x (BS, L, D), Bm/C (BS, L, N), dt (BS, L, D), A (D, N). The
recurrence per (b, d, n) is

    z    = dt * A
    abar = exp(z)
    phi  = (abar - 1) / z        (series 1 + z/2 when |z| < GUARD)
    h_l  = abar * h_{l-1} + phi * dt * Bm * x
    y_l  = sum_n C * h_l

which is zero-order-hold discretization of h' = A h + B x, y = C h with the
input held constant over each step of width dt.
"""

from __future__ import annotations

import numpy as np

GUARD = 1e-4


def _discretize(x, Bm, C, dt, A):
    z = dt[..., None] * A
    abar = np.exp(z)
    small = np.abs(z) < GUARD
    safe = np.where(small, 1.0, z)
    phi = np.where(small, 1.0 + 0.5 * z, (abar - 1.0) / safe)
    u = phi * dt[..., None] * Bm[:, :, None, :] * x[..., None]
    return abar, phi, u


def scan_fwd(x, Bm, C, dt, A):
    """Sequential recurrence. Returns (y, h) with h (BS, L, D, N)."""
    abar, _, u = _discretize(x, Bm, C, dt, A)
    BS, L, D, N = u.shape
    h = np.empty_like(u)
    state = np.zeros((BS, D, N), dtype=u.dtype)
    for pos in range(L):
        state = abar[:, pos] * state + u[:, pos]
        h[:, pos] = state
    y = np.einsum("bldn,bln->bld", h, C)
    return y, h


def scan_fwd_parallel(x, Bm, C, dt, A):
    """Associative-scan evaluation of the same recurrence.

    Elements (a, b) compose as (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2);
    log2(L) rounds of offset doubling produce the inclusive scan.
    """
    abar, _, u = _discretize(x, Bm, C, dt, A)
    L = u.shape[1]
    acc_a = abar.copy()
    acc_b = u.copy()
    offset = 1
    while offset < L:
        acc_b[:, offset:] = acc_b[:, offset:] + acc_a[:, offset:] * acc_b[:, :-offset]
        acc_a[:, offset:] = acc_a[:, offset:] * acc_a[:, :-offset]
        offset *= 2
    y = np.einsum("bldn,bln->bld", acc_b, C)
    return y, acc_b


def scan_bwd(x, Bm, C, dt, A, h, dy):
    """Adjoint of the recurrence given saved states h and output grad dy."""
    z = dt[..., None] * A
    abar = np.exp(z)
    small = np.abs(z) < GUARD
    safe = np.where(small, 1.0, z)
    phi = np.where(small, 1.0 + 0.5 * z, (abar - 1.0) / safe)
    # derivative of phi as computed, including the series branch
    phip = np.where(small, 0.5, (abar * (z - 1.0) + 1.0) / (safe * safe))
    BS, L, D, N = h.shape
    dx = np.zeros_like(x)
    dB = np.zeros_like(Bm)
    dC = np.zeros_like(C)
    ddt = np.zeros_like(dt)
    dA = np.zeros_like(A)
    carry = np.zeros((BS, D, N), dtype=h.dtype)
    for pos in range(L - 1, -1, -1):
        g = dy[:, pos, :, None] * C[:, pos, None, :] + carry
        dC[:, pos] = np.einsum("bd,bdn->bn", dy[:, pos], h[:, pos])
        h_prev = h[:, pos - 1] if pos > 0 else np.zeros((BS, D, N), dtype=h.dtype)
        bx = Bm[:, pos, None, :] * x[:, pos, :, None]
        dz = g * h_prev * abar[:, pos] + g * dt[:, pos, :, None] * bx * phip[:, pos]
        ddt[:, pos] = (dz * A).sum(-1) + (g * phi[:, pos] * bx).sum(-1)
        dA += np.einsum("bdn,bd->dn", dz, dt[:, pos])
        dB[:, pos] = np.einsum("bdn,bd->bn", g * phi[:, pos], dt[:, pos] * x[:, pos])
        dx[:, pos] = (g * phi[:, pos] * dt[:, pos, :, None] * Bm[:, pos, None, :]).sum(-1)
        carry = abar[:, pos] * g
    return dx, dB, dC, ddt, dA
