"""Elliptic solves on the two flattened strips.

The liquid occupies ``-1 < p < 0`` (stream function psi) and the gas
``0 < p < 1`` (voltage V).  Fields are even in q, so the q-direction is
discretized by cosine collocation on the half period ``q_j = j*pi/n``,
``j = 0..n`` with ``n = M/2``: the same equispaced nodes a full-period Fourier
grid of M points would use, with the even symmetry built in.  The p-direction
uses Chebyshev-Lobatto nodes.

Two routes to the flat-state linearization live here as well: closed-form
Green's functions for ``d^2/dp^2 - k^2`` with per-mode quadrature, and the
full variable-coefficient collocation solve, which can be differentiated
numerically in eta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import _kernels
from .params import WaveParams, tk

__all__ = [
    "SingularSystemError",
    "UnresolvedProfileError",
    "SurfaceProfile",
    "StripGrid",
    "StripField",
    "InterfaceTrace",
    "ModeSolution",
    "cheb",
    "green_lower",
    "green_upper",
    "mode_solve_w",
    "mode_solve_h",
    "w_trace",
    "w_trace_exponential",
    "h_trace",
    "h_trace_exponential",
    "solve_stream",
    "solve_voltage",
    "interface_traces",
    "StripSolve",
    "green_solve",
    "LOWER",
    "UPPER",
]

LOWER = "lower"
UPPER = "upper"
# flattening degenerates as sup|eta| -> 1
DOMAIN_MARGIN = 1e-8


class SingularSystemError(ArithmeticError):
    pass


class UnresolvedProfileError(ValueError):
    pass


def cheb(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Lobatto nodes ``x_j = cos(pi j/(n-1))`` and first-derivative matrix."""
    if n < 2:
        raise ValueError("need at least two nodes")
    j = np.arange(n)
    x = np.sin(np.pi * (n - 1 - 2 * j) / (2 * (n - 1)))
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c = c * (-1.0) ** j
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n))
    d -= np.diag(d.sum(axis=1))
    return x, d


@dataclass(frozen=True)
class SurfaceProfile:
    """Even, zero-mean interface ``eta(q) = sum_n coeffs[n-1] cos(n q)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        if c.ndim != 1:
            raise ValueError("coeffs must be one-dimensional")
        if not np.all(np.isfinite(c)):
            raise ValueError("non-finite coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, nmodes: int) -> "SurfaceProfile":
        return cls(np.zeros(nmodes))

    @classmethod
    def mode(cls, k: int, amplitude: float = 1.0, nmodes: int | None = None) -> "SurfaceProfile":
        c = np.zeros(max(k, nmodes or 0))
        c[k - 1] = amplitude
        return cls(c)

    @property
    def nmodes(self) -> int:
        return self.coeffs.size

    @property
    def max_mode(self) -> int:
        nz = np.flatnonzero(self.coeffs)
        return int(nz[-1]) + 1 if nz.size else 0

    def padded(self, nmodes: int) -> "SurfaceProfile":
        if nmodes < self.max_mode:
            raise ValueError("padding would drop nonzero modes")
        c = np.zeros(nmodes)
        m = min(nmodes, self.nmodes)
        c[:m] = self.coeffs[:m]
        return SurfaceProfile(c)

    def __add__(self, other: "SurfaceProfile") -> "SurfaceProfile":
        n = max(self.nmodes, other.nmodes)
        return SurfaceProfile(self.padded(n).coeffs + other.padded(n).coeffs)

    def __mul__(self, scale: float) -> "SurfaceProfile":
        return SurfaceProfile(scale * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SurfaceProfile":
        return SurfaceProfile(-self.coeffs)

    def evaluate(self, q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """eta, eta' and eta'' at the points q, differentiating the series exactly."""
        q = np.asarray(q, dtype=float)
        m = np.arange(1, self.nmodes + 1)
        arg = np.multiply.outer(q, m)
        cos, sin = np.cos(arg), np.sin(arg)
        return cos @ self.coeffs, -(sin @ (m * self.coeffs)), -(cos @ (m * m * self.coeffs))

    def sup_norm(self, npts: int = 512) -> float:
        return float(np.max(np.abs(self.evaluate(np.linspace(0, np.pi, npts))[0])))


@dataclass(frozen=True)
class StripGrid:
    """Tensor collocation grid: M equispaced q-nodes per period, N Chebyshev p-nodes.

    Only the ``M/2 + 1`` nodes of the half period ``[0, pi]`` are stored.
    """

    M: int
    N: int
    side: str = LOWER

    def __post_init__(self):
        if self.M < 8 or self.M % 2:
            raise ValueError("M must be even and >= 8")
        if self.N < 8:
            raise ValueError("N must be >= 8")
        if self.side not in (LOWER, UPPER):
            raise ValueError("side must be 'lower' or 'upper'")

    def other_side(self) -> "StripGrid":
        return StripGrid(self.M, self.N, UPPER if self.side == LOWER else LOWER)

    @property
    def n(self) -> int:
        return self.M // 2

    @property
    def nq(self) -> int:
        return self.n + 1

    @property
    def max_mode(self) -> int:
        """Highest cosine mode resolvable (M >= 2*mode + 2)."""
        return self.M // 2 - 1

    @cached_property
    def q(self) -> np.ndarray:
        return np.pi * np.arange(self.nq) / self.n

    @cached_property
    def _cheb(self):
        return cheb(self.N)

    @cached_property
    def p(self) -> np.ndarray:
        x = self._cheb[0]
        return 0.5 * (x - 1.0) if self.side == LOWER else 0.5 * (x + 1.0)

    @property
    def surface_index(self) -> int:
        """p-index of the interface p = 0."""
        return 0 if self.side == LOWER else self.N - 1

    @property
    def wall_index(self) -> int:
        return self.N - 1 if self.side == LOWER else 0

    @cached_property
    def dp(self) -> np.ndarray:
        return 2.0 * self._cheb[1]

    @cached_property
    def dpp(self) -> np.ndarray:
        return self.dp @ self.dp

    @cached_property
    def synthesis(self) -> np.ndarray:
        """``cos(m q_j)`` for m = 0..n: cosine coefficients -> node values."""
        m = np.arange(self.nq)
        return np.cos(np.outer(self.q, m))

    @cached_property
    def analysis(self) -> np.ndarray:
        """Node values -> cosine coefficients a_0..a_n (discrete cosine transform)."""
        n = self.n
        w = np.full(self.nq, 2.0 / n)
        w[[0, -1]] = 1.0 / n
        a = (self.synthesis * w[:, None]).T.copy()
        a[[0, -1]] *= 0.5
        return a

    @cached_property
    def dq(self) -> np.ndarray:
        """Even node values -> q-derivative at the nodes (odd output)."""
        m = np.arange(self.nq)
        sin = np.sin(np.outer(self.q, m))
        return (sin * -m) @ self.analysis

    @cached_property
    def dqq(self) -> np.ndarray:
        m = np.arange(self.nq)
        return (self.synthesis * -(m * m)) @ self.analysis

    def full_q(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    def unfold(self, values: np.ndarray, odd: bool = False) -> np.ndarray:
        """Extend half-period node values (axis 0) to all M nodes of the period."""
        tail = values[1:-1][::-1]
        return np.concatenate([values, -tail if odd else tail], axis=0)

    def cosine_coefficients(self, values: np.ndarray) -> np.ndarray:
        return self.analysis @ values

    def projection(self, values: np.ndarray, k: int) -> float:
        """``(1/pi) * integral over a period of f(q) cos(kq)`` by the discrete transform."""
        if not 1 <= k < self.n:
            raise ValueError("mode outside the resolved range")
        return float(self.analysis[k] @ values)

    def check_profile(self, eta: SurfaceProfile):
        if eta.max_mode > self.max_mode:
            raise UnresolvedProfileError(
                f"profile mode {eta.max_mode} exceeds grid capacity {self.max_mode} (M={self.M})")

    def eval_profile(self, eta: SurfaceProfile):
        self.check_profile(eta)
        return eta.evaluate(self.q)


@dataclass(frozen=True)
class InterfaceTrace:
    fq: np.ndarray
    fp: np.ndarray


@dataclass
class StripField:
    values: np.ndarray
    grid: StripGrid
    name: str

    def at_surface(self) -> np.ndarray:
        return self.values[:, self.grid.surface_index]

    def full_period(self) -> np.ndarray:
        return self.grid.unfold(self.values)

    def odd_fraction(self) -> float:
        """Relative size of the odd-in-q part on the full-period grid."""
        full = self.full_period()
        refl = np.concatenate([full[:1], full[1:][::-1]], axis=0)
        odd = 0.5 * (full - refl)
        return float(np.linalg.norm(odd) / max(np.linalg.norm(full), np.finfo(float).tiny))


def _coefficients(side, p, eta, e1, e2, with_partials=False):
    """Coefficients (A, B, C) of psi_qp, psi_pp, psi_p in the flattened Laplacian.

    The psi_qq coefficient is 1.  Partial derivatives are returned with respect
    to eta, eta' and eta'' (as dicts keyed 0, 1, 2).
    """
    eta = eta[:, None]
    e1 = e1[:, None]
    e2 = e2[:, None]
    p = p[None, :]
    if side == LOWER:
        P, H, sgn = 1.0 + p, 1.0 + eta, 1.0
    else:
        P, H, sgn = 1.0 - p, 1.0 - eta, -1.0
    H2 = H * H
    a = -2.0 * P * e1 / H
    b = (P * P * e1 * e1 + 1.0) / H2
    c = -P * e2 / H + sgn * 2.0 * P * e1 * e1 / H2
    if not with_partials:
        return a, b, c
    H3 = H2 * H
    # d/d eta of 1/H^j is sgn*j/H^(j+1) with sgn = dH/deta * -1
    pa = {0: sgn * 2.0 * P * e1 / H2, 1: -2.0 * P / H + 0 * e1, 2: 0.0 * a}
    pb = {0: -sgn * 2.0 * (P * P * e1 * e1 + 1.0) / H3, 1: 2.0 * P * P * e1 / H2, 2: 0.0 * b}
    pc = {0: sgn * P * e2 / H2 - 4.0 * P * e1 * e1 / H3,
          1: sgn * 4.0 * P * e1 / H2,
          2: -P / H + 0 * e2}
    return (a, b, c), (pa, pb, pc)


def _apply(grid: StripGrid, u, a, b, c):
    up = u @ grid.dp.T
    return grid.dqq @ u + a * (grid.dq @ up) + b * (u @ grid.dpp.T) + c * up


class StripSolve:
    """A factored collocation problem for one strip at a fixed interface.

    Keeps the LU factors so that further right-hand sides (linearized
    solves, sensitivities to boundary data) cost one back-substitution.
    """

    def __init__(self, grid: StripGrid, eta: SurfaceProfile, *, use_numba=None):
        grid.check_profile(eta)
        self.grid = grid
        self.eta = eta
        vals = grid.eval_profile(eta)
        sup = max(float(np.max(np.abs(vals[0]))), eta.sup_norm())
        if sup >= 1.0 - DOMAIN_MARGIN:
            raise SingularSystemError(f"sup|eta| = {sup:.6g}: flattening transform degenerates")
        self.eta_vals = vals
        (a, b, c), partials = _coefficients(grid.side, grid.p, *vals, with_partials=True)
        self.coef = (a, b, c)
        self.partials = partials
        op = _kernels.assemble_operator(grid.dq, grid.dqq, grid.dp, grid.dpp, a, b, c,
                                        use_numba=use_numba)
        if not np.all(np.isfinite(op)):
            raise SingularSystemError("non-finite collocation matrix")
        with np.errstate(all="ignore"):
            self._lu = lu_factor(op, check_finite=False)
        piv = np.abs(np.diag(self._lu[0]))
        if not np.all(np.isfinite(piv)) or piv.min() <= 1e-14 * piv.max():
            raise SingularSystemError("collocation matrix is numerically singular")

    @property
    def shape(self):
        return self.grid.nq, self.grid.N

    def solve(self, forcing, surface_value: float, wall_value: float) -> np.ndarray:
        """Field with the given interior forcing and constant Dirichlet data."""
        g = self.grid
        u = np.zeros(self.shape)
        u[:, g.surface_index] = surface_value
        u[:, g.wall_index] = wall_value
        rhs = np.broadcast_to(forcing, self.shape) - _apply(g, u, *self.coef)
        return self._fill(u, lu_solve(self._lu, rhs[:, 1:-1].reshape(-1), check_finite=False))

    def _fill(self, u, interior):
        u = u.copy()
        u[:, 1:-1] = interior.reshape(self.grid.nq, self.grid.N - 2)
        return u

    def solve_many(self, rhs: np.ndarray) -> np.ndarray:
        """Homogeneous-boundary solves for a stack of forcings ``(nrhs, nq, N)``."""
        g = self.grid
        r = rhs[:, :, 1:-1].reshape(rhs.shape[0], -1).T
        sol = lu_solve(self._lu, r, check_finite=False).T
        out = np.zeros_like(rhs)
        out[:, :, 1:-1] = sol.reshape(rhs.shape[0], g.nq, g.N - 2)
        return out

    def residual(self, u, forcing) -> np.ndarray:
        """Pointwise PDE residual at interior nodes."""
        return (_apply(self.grid, u, *self.coef) - forcing)[:, 1:-1]

    def eta_sensitivity(self, u: np.ndarray, directions) -> np.ndarray:
        """Derivative of the solved field along interface directions.

        ``directions`` is a sequence of ``(d_eta, d_eta', d_eta'')`` node-value
        triples.  The boundary data do not depend on eta, so each derivative
        solves the same operator with forcing ``-(dL) u``.
        """
        g = self.grid
        up = u @ g.dp.T
        uqp = g.dq @ up
        upp = u @ g.dpp.T
        pa, pb, pc = self.partials
        rhs = []
        for d in directions:
            da = sum(pa[i] * d[i][:, None] for i in range(3))
            db = sum(pb[i] * d[i][:, None] for i in range(3))
            dc = sum(pc[i] * d[i][:, None] for i in range(3))
            rhs.append(-(da * uqp + db * upp + dc * up))
        return self.solve_many(np.array(rhs))


def _check_side(grid: StripGrid, side: str):
    if grid.side != side:
        raise ValueError(f"grid must be the {side} strip")


def solve_stream(eta: SurfaceProfile, lam: float, p: WaveParams, grid: StripGrid,
                 solver: StripSolve | None = None) -> StripField:
    """Stream function in the liquid: flattened ``Delta psi = gamma``, psi=0 at p=0, psi=m at p=-1."""
    _check_side(grid, LOWER)
    solver = solver or StripSolve(grid, eta)
    u = solver.solve(p.gamma, 0.0, 0.5 * p.gamma - lam)
    return StripField(u, grid, "psi")


def solve_voltage(eta: SurfaceProfile, e0: float, p: WaveParams, grid: StripGrid,
                  solver: StripSolve | None = None) -> StripField:
    """Voltage in the gas: flattened ``Delta V = 0``, V=0 at p=0, V=E0 at p=1."""
    _check_side(grid, UPPER)
    solver = solver or StripSolve(grid, eta)
    u = solver.solve(0.0, 0.0, e0)
    return StripField(u, grid, "V")


def interface_traces(fld: StripField, grid: StripGrid | None = None) -> InterfaceTrace:
    g = grid or fld.grid
    j = g.surface_index
    fq = (g.dq @ fld.values)[:, j]
    fp = fld.values @ g.dp[j]
    return InterfaceTrace(fq=fq, fp=fp)


# ---------------------------------------------------------------------------
# flat-state mode problems via Green's functions
# ---------------------------------------------------------------------------

def green_lower(k: int, p, r):
    """Dirichlet Green's function of d^2/dp^2 - k^2 on [-1, 0]."""
    return _kernels.green_lower_numpy(k, p, r)


def green_upper(k: int, p, r):
    """Dirichlet Green's function of d^2/dp^2 - k^2 on [0, 1]."""
    return _kernels.green_upper_numpy(k, p, r)


@dataclass
class ModeSolution:
    k: int
    p: np.ndarray
    values: np.ndarray
    trace: float  # closed form
    trace_quadrature: float
    extras: dict = field(default_factory=dict)


def _split_nodes(p_out, a, b, ngrid):
    """Gauss-Legendre nodes on [a, p] and [p, b] for every output point p."""
    x, w = np.polynomial.legendre.leggauss(ngrid)
    lo_mid, lo_half = 0.5 * (p_out + a), 0.5 * (p_out - a)
    hi_mid, hi_half = 0.5 * (b + p_out), 0.5 * (b - p_out)
    r = np.concatenate([lo_mid[:, None] + lo_half[:, None] * x, hi_mid[:, None] + hi_half[:, None] * x], axis=1)
    wt = np.concatenate([lo_half[:, None] * w, hi_half[:, None] * w], axis=1)
    return r, wt


def green_solve(k: int, forcing, side: str, p_out, ngrid: int = 64, *, use_numba=None) -> np.ndarray:
    """``u(p) = integral G(p, r) f(r) dr``: solves ``u'' - k^2 u = f`` with zero end values."""
    a, b = (-1.0, 0.0) if side == LOWER else (0.0, 1.0)
    p_out = np.asarray(p_out, dtype=float)
    r, wt = _split_nodes(p_out, a, b, ngrid)
    return _kernels.green_quadrature(side == LOWER, k, p_out, r, wt, forcing(r), use_numba=use_numba)


def w_trace(k: int, lam: float, gamma: float) -> float:
    """Surface normal derivative of the stream-function mode, ``((gamma+lam) T_k - lam)/T_k``."""
    t = tk(k)
    return ((gamma + lam) * t - lam) / t


def w_trace_exponential(k: int, lam: float, gamma: float) -> float:
    ek, emk = np.exp(k), np.exp(-k)
    return ((gamma + lam - lam * k) * ek - (gamma + lam + lam * k) * emk) / (2.0 * np.sinh(k))


def h_trace(k: int, e0: float) -> float:
    t = tk(k)
    return (1.0 - t) / t * e0


def h_trace_exponential(k: int, e0: float) -> float:
    ek, emk = np.exp(k), np.exp(-k)
    return ((k - 1) * ek + (k + 1) * emk) / (2.0 * np.sinh(k)) * e0


def mode_solve_w(k: int, lam: float, p: WaveParams, ngrid: int = 64) -> ModeSolution:
    """Flat-state stream-function response to ``eta = cos(kq)``, per unit amplitude."""
    if ngrid < 16:
        raise ValueError("ngrid must be >= 16")
    gam = p.gamma

    def f(r):
        return 2.0 * gam - (1.0 + r) * (gam * r + lam) * k * k

    pts = np.linspace(-1.0, 0.0, ngrid)
    vals = green_solve(k, f, LOWER, pts, ngrid)
    x, w = np.polynomial.legendre.leggauss(ngrid)
    r = 0.5 * (x - 1.0)
    tq = 0.5 * np.sum(w * f(r) * np.sinh(k * (1.0 + r))) / np.sinh(k)
    return ModeSolution(k, pts, vals, w_trace(k, lam, gam), float(tq),
                        {"exponential": w_trace_exponential(k, lam, gam)})


def mode_solve_h(k: int, e0: float, ngrid: int = 64) -> ModeSolution:
    """Flat-state voltage response to ``eta = cos(kq)``, per unit amplitude."""
    if ngrid < 16:
        raise ValueError("ngrid must be >= 16")

    def f(r):
        return e0 * (r - 1.0) * k * k

    pts = np.linspace(0.0, 1.0, ngrid)
    vals = green_solve(k, f, UPPER, pts, ngrid)
    x, w = np.polynomial.legendre.leggauss(ngrid)
    r = 0.5 * (x + 1.0)
    tq = -0.5 * np.sum(w * f(r) * np.sinh(k * (1.0 - r))) / np.sinh(k)
    return ModeSolution(k, pts, vals, h_trace(k, e0), float(tq),
                        {"exponential": h_trace_exponential(k, e0)})
