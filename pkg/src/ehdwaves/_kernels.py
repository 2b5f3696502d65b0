"""Inner loops shared by the strip solver and the Green's-function quadrature.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy version
with identical semantics.  The compiled path is used when numba imports and
``EHDWAVES_DISABLE_NUMBA`` is unset (or "0"); ``benchmarks/bench_kernels.py``
times both.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

_DISABLED = os.environ.get("EHDWAVES_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None and not _DISABLED


# ---------------------------------------------------------------------------
# collocation operator on the interior of a tensor grid
#
#   L = Dqq (x) I + diag(A) Dq (x) Dp + diag(B) I (x) Dpp + diag(C) I (x) Dp
#
# restricted to interior p-nodes 1..N-2 on both sides.
# ---------------------------------------------------------------------------

def assemble_operator_numpy(dq, dqq, dp, dpp, a, b, c):
    nq = dq.shape[0]
    dpi = dp[1:-1, 1:-1]
    dppi = dpp[1:-1, 1:-1]
    ni = dpi.shape[0]
    ai, bi, ci = a[:, 1:-1], b[:, 1:-1], c[:, 1:-1]
    eye_p = np.eye(ni)
    eye_q = np.eye(nq)
    op = dqq[:, None, :, None] * eye_p[None, :, None, :]
    op = op + ai[:, :, None, None] * (dq[:, None, :, None] * dpi[None, :, None, :])
    op = op + eye_q[:, None, :, None] * (bi[:, :, None, None] * dppi[None, :, None, :]
                                          + ci[:, :, None, None] * dpi[None, :, None, :])
    return op.reshape(nq * ni, nq * ni)


def _assemble_operator_loops(dq, dqq, dp, dpp, a, b, c):
    nq = dq.shape[0]
    n = dp.shape[0]
    ni = n - 2
    out = np.zeros((nq * ni, nq * ni))
    for qa in range(nq):
        for i in range(ni):
            row = qa * ni + i
            ai = a[qa, i + 1]
            bi = b[qa, i + 1]
            ci = c[qa, i + 1]
            for qb in range(nq):
                dqq_ab = dqq[qa, qb]
                adq = ai * dq[qa, qb]
                base = qb * ni
                out[row, base + i] += dqq_ab
                if adq != 0.0:
                    for j in range(ni):
                        out[row, base + j] += adq * dp[i + 1, j + 1]
            base = qa * ni
            for j in range(ni):
                out[row, base + j] += bi * dpp[i + 1, j + 1] + ci * dp[i + 1, j + 1]
    return out


# ---------------------------------------------------------------------------
# Dirichlet Green's functions of d^2/dp^2 - k^2
# ---------------------------------------------------------------------------

def green_lower_numpy(k, p, r):
    """Green's function on [-1, 0]."""
    p, r = np.broadcast_arrays(np.asarray(p, float), np.asarray(r, float))
    lo = np.minimum(p, r)
    hi = np.maximum(p, r)
    return np.sinh(k * (1.0 + lo)) * np.sinh(k * hi) / (k * np.sinh(k))


def green_upper_numpy(k, p, r):
    """Green's function on [0, 1]."""
    p, r = np.broadcast_arrays(np.asarray(p, float), np.asarray(r, float))
    lo = np.minimum(p, r)
    hi = np.maximum(p, r)
    return -np.sinh(k * lo) * np.sinh(k * (1.0 - hi)) / (k * np.sinh(k))


def green_quadrature_numpy(lower, k, p_out, r_nodes, w_nodes, f_vals):
    """Sum_j w_ij G(p_i, r_ij) f_ij over the nodes of each output point."""
    g = green_lower_numpy if lower else green_upper_numpy
    vals = g(k, p_out[:, None], r_nodes)
    return np.sum(w_nodes * vals * f_vals, axis=1)


def _green_quadrature_loops(lower, k, p_out, r_nodes, w_nodes, f_vals):
    m, nn = r_nodes.shape
    out = np.zeros(m)
    denom = k * math.sinh(k)
    for i in range(m):
        p = p_out[i]
        acc = 0.0
        for j in range(nn):
            r = r_nodes[i, j]
            lo = p if p < r else r
            hi = r if p < r else p
            if lower:
                gval = math.sinh(k * (1.0 + lo)) * math.sinh(k * hi) / denom
            else:
                gval = -math.sinh(k * lo) * math.sinh(k * (1.0 - hi)) / denom
            acc += w_nodes[i, j] * gval * f_vals[i, j]
        out[i] = acc
    return out


if HAVE_NUMBA:
    assemble_operator_numba = numba.njit(cache=True)(_assemble_operator_loops)
    green_quadrature_numba = numba.njit(cache=True)(_green_quadrature_loops)
else:  # pragma: no cover
    assemble_operator_numba = None
    green_quadrature_numba = None


def assemble_operator(dq, dqq, dp, dpp, a, b, c, *, use_numba: bool | None = None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return assemble_operator_numba(dq, dqq, dp, dpp, a, b, c)
    return assemble_operator_numpy(dq, dqq, dp, dpp, a, b, c)


def green_quadrature(lower, k, p_out, r_nodes, w_nodes, f_vals, *, use_numba: bool | None = None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    args = (bool(lower), float(k), np.ascontiguousarray(p_out, float),
            np.ascontiguousarray(r_nodes, float), np.ascontiguousarray(w_nodes, float),
            np.ascontiguousarray(f_vals, float))
    if use_numba:
        return green_quadrature_numba(*args)
    return green_quadrature_numpy(*args)
