"""Interfacial Bernoulli residual and its derivatives.

The unknowns of a steady wave are the cosine coefficients of eta, the speed
lam and a Bernoulli correction q0 (Q = lam^2 - eps0 E0^2 + q0) that absorbs
the mean mode of the residual.  The residual is sampled at the half-period
q-nodes and viewed through its cosine coefficients 0..K, K = number of eta
modes kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import WaveParams, tk
from .strip import (
    LOWER,
    UPPER,
    StripGrid,
    StripSolve,
    SurfaceProfile,
    h_trace,
    w_trace,
)

__all__ = [
    "NonfiniteResidualError",
    "ExtendedState",
    "ResidualVector",
    "EtaJacobian",
    "ResidualModel",
    "assemble_residual",
    "eta_jacobian",
    "d_lambda_eta",
    "d_e0_eta",
    "FlatPoint",
    "second_derivative",
    "third_derivative",
    "second_derivative_projection",
    "third_derivative_projection",
]


class NonfiniteResidualError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ExtendedState:
    eta: SurfaceProfile
    lam: float
    q0: float = 0.0

    @classmethod
    def trivial(cls, lam: float, nmodes: int) -> "ExtendedState":
        return cls(SurfaceProfile.zeros(nmodes), lam, 0.0)

    def vector(self) -> np.ndarray:
        """Packed unknowns ``[eta_1..eta_K, q0, lam]``."""
        return np.concatenate([self.eta.coeffs, [self.q0, self.lam]])

    @classmethod
    def from_vector(cls, u) -> "ExtendedState":
        u = np.asarray(u, dtype=float)
        return cls(SurfaceProfile(u[:-2]), float(u[-1]), float(u[-2]))


@dataclass
class ResidualVector:
    nodes: np.ndarray  # values at the half-period q-nodes
    coeffs: np.ndarray  # cosine coefficients 0..n
    grid: StripGrid
    extras: dict = field(default_factory=dict, repr=False)

    def modes(self, kmax: int) -> np.ndarray:
        return self.coeffs[: kmax + 1]

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.nodes)))

    def projection(self, k: int) -> float:
        return self.grid.projection(self.nodes, k)


@dataclass
class EtaJacobian:
    """Jacobian in cosine coordinates.

    Rows: residual modes 0..K.  Columns: eta_1..eta_K, then q0, then lam.
    """

    matrix: np.ndarray
    nmodes: int

    @property
    def eta_block(self) -> np.ndarray:
        """Modes 1..K against eta_1..eta_K (mean row and borders removed)."""
        k = self.nmodes
        return self.matrix[1 : k + 1, :k]

    @property
    def with_mean(self) -> np.ndarray:
        """Square system in (eta, q0) for modes 0..K."""
        k = self.nmodes
        return self.matrix[:, : k + 1]

    @property
    def q0_column(self) -> np.ndarray:
        return self.matrix[:, self.nmodes]

    @property
    def lam_column(self) -> np.ndarray:
        return self.matrix[:, self.nmodes + 1]


def _mode_directions(q, nmodes):
    m = np.arange(1, nmodes + 1)
    arg = np.outer(q, m)
    c, s = np.cos(arg), np.sin(arg)
    return [(c[:, j], -m[j] * s[:, j], -(m[j] ** 2) * c[:, j]) for j in range(nmodes)]


class ResidualModel:
    """Bernoulli residual on a pair of strip grids with K retained eta modes."""

    def __init__(self, params: WaveParams, M: int = 64, N: int = 48, nmodes: int | None = None,
                 *, use_numba=None):
        self.params = params
        self.lower = StripGrid(M, N, LOWER)
        self.upper = StripGrid(M, N, UPPER)
        self.nmodes = nmodes if nmodes is not None else M // 4
        if not 1 <= self.nmodes <= self.lower.max_mode:
            raise ValueError(f"nmodes must lie in 1..{self.lower.max_mode}")
        self.use_numba = use_numba

    def with_params(self, params: WaveParams) -> "ResidualModel":
        new = object.__new__(ResidualModel)
        new.__dict__.update(self.__dict__)
        new.params = params
        return new

    @property
    def grid(self) -> StripGrid:
        return self.lower

    def trivial(self, lam: float) -> ExtendedState:
        return ExtendedState.trivial(lam, self.nmodes)

    def state(self, eta, lam, q0=0.0) -> ExtendedState:
        if not isinstance(eta, SurfaceProfile):
            eta = SurfaceProfile(eta)
        return ExtendedState(eta.padded(self.nmodes), lam, q0)

    # -- evaluation ---------------------------------------------------------

    def _solve(self, state: ExtendedState):
        p = self.params
        eta = state.eta
        lo = StripSolve(self.lower, eta, use_numba=self.use_numba)
        up = StripSolve(self.upper, eta, use_numba=self.use_numba)
        psi = lo.solve(p.gamma, 0.0, 0.5 * p.gamma - state.lam)
        volt = up.solve(0.0, 0.0, p.e0)
        return lo, up, psi, volt

    def _traces(self, grid, u):
        j = grid.surface_index
        return (grid.dq @ u)[:, j], u @ grid.dp[j]

    def _pointwise(self, state, eta, e1, e2, psq, psp, vq, vp, partials=False):
        p = self.params
        hl, hu = 1.0 + eta, 1.0 - eta
        s2 = 1.0 + e1 * e1
        big_q = state.lam**2 - p.field_energy + state.q0
        f = (psq**2 + s2 / hl**2 * psp**2 - 2.0 * e1 / hl * psq * psp
             + 2.0 * p.g * eta - 2.0 * p.sigma * e2 / s2**1.5
             - p.eps0 * (vq**2 + s2 / hu**2 * vp**2 - 2.0 * e1 / hu * vq * vp)
             - big_q)
        if not partials:
            return f
        d = {
            "psq": 2.0 * psq - 2.0 * e1 / hl * psp,
            "psp": 2.0 * s2 / hl**2 * psp - 2.0 * e1 / hl * psq,
            "vq": -p.eps0 * (2.0 * vq - 2.0 * e1 / hu * vp),
            "vp": -p.eps0 * (2.0 * s2 / hu**2 * vp - 2.0 * e1 / hu * vq),
            0: (-2.0 * s2 / hl**3 * psp**2 + 2.0 * e1 / hl**2 * psq * psp + 2.0 * p.g
                - p.eps0 * (2.0 * s2 / hu**3 * vp**2 - 2.0 * e1 / hu**2 * vq * vp)),
            1: (2.0 * e1 / hl**2 * psp**2 - 2.0 / hl * psq * psp
                + 6.0 * p.sigma * e2 * e1 / s2**2.5
                - p.eps0 * (2.0 * e1 / hu**2 * vp**2 - 2.0 / hu * vq * vp)),
            2: -2.0 * p.sigma / s2**1.5,
        }
        return f, d

    def residual(self, state: ExtendedState) -> ResidualVector:
        lo, up, psi, volt = self._solve(state)
        eta, e1, e2 = lo.eta_vals
        psq, psp = self._traces(self.lower, psi)
        vq, vp = self._traces(self.upper, volt)
        f = self._pointwise(state, eta, e1, e2, psq, psp, vq, vp)
        if not np.all(np.isfinite(f)):
            raise NonfiniteResidualError("residual has non-finite entries")
        return ResidualVector(f, self.lower.analysis @ f, self.lower,
                              {"psi": psi, "V": volt, "psi_p": psp, "V_p": vp})

    def residual_modes(self, state: ExtendedState) -> np.ndarray:
        return self.residual(state).coeffs[: self.nmodes + 1]

    # -- derivatives --------------------------------------------------------

    def jacobian(self, state: ExtendedState, method: str = "tangent", *,
                 with_e0: bool = False, step: float = 1e-6) -> EtaJacobian:
        """Jacobian of residual modes 0..K in (eta_1..eta_K, q0, lam).

        ``method="tangent"`` differentiates the discrete solves exactly (one
        factorization per strip, back-substitutions per column);
        ``method="fd"`` uses central differences of the full residual.
        With ``with_e0`` an extra trailing column holds d/dE0.
        """
        if method == "fd":
            return self._jacobian_fd(state, with_e0=with_e0, step=step)
        if method != "tangent":
            raise ValueError(f"unknown method {method!r}")
        return self.linearize(state, with_e0=with_e0)[1]

    def linearize(self, state: ExtendedState, *, with_e0: bool = False):
        """Residual and tangent Jacobian from one pair of factorizations."""
        p = self.params
        K = self.nmodes
        lo, up, psi, volt = self._solve(state)
        eta, e1, e2 = lo.eta_vals
        psq, psp = self._traces(self.lower, psi)
        vq, vp = self._traces(self.upper, volt)
        f, d = self._pointwise(state, eta, e1, e2, psq, psp, vq, vp, partials=True)
        dirs = _mode_directions(self.lower.q, K)
        dpsi = lo.eta_sensitivity(psi, dirs)
        dvolt = up.eta_sensitivity(volt, dirs)
        jl, ju = self.lower.surface_index, self.upper.surface_index
        dpsp = dpsi @ self.lower.dp[jl]
        dvp = dvolt @ self.upper.dp[ju]
        dpsq = np.einsum("ab,kb->ka", self.lower.dq, dpsi[:, :, jl])
        dvq = np.einsum("ab,kb->ka", self.upper.dq, dvolt[:, :, ju])
        cols = []
        for j, (a0, a1, a2) in enumerate(dirs):
            cols.append(d[0] * a0 + d[1] * a1 + d[2] * a2 + d["psq"] * dpsq[j] + d["psp"] * dpsp[j]
                        + d["vq"] * dvq[j] + d["vp"] * dvp[j])
        cols.append(-np.ones_like(f))
        # lam enters through the wall value m = gamma/2 - lam and through Q
        dpsi_l = lo.solve(0.0, 0.0, -1.0)
        dq_l, dp_l = self._traces(self.lower, dpsi_l)
        cols.append(d["psq"] * dq_l + d["psp"] * dp_l - 2.0 * state.lam)
        if with_e0:
            dv_e = up.solve(0.0, 0.0, 1.0)
            dq_e, dp_e = self._traces(self.upper, dv_e)
            cols.append(d["vq"] * dq_e + d["vp"] * dp_e + 2.0 * p.eps0 * p.e0)
        if not np.all(np.isfinite(f)):
            raise NonfiniteResidualError("residual has non-finite entries")
        nodes = np.array(cols).T
        res = ResidualVector(f, self.lower.analysis @ f, self.lower,
                             {"psi": psi, "V": volt, "psi_p": psp, "V_p": vp})
        return res, EtaJacobian(self.lower.analysis[: K + 1] @ nodes, K)

    def _jacobian_fd(self, state, *, with_e0=False, step=1e-6):
        K = self.nmodes
        u0 = state.vector()
        cols = []
        scale = max(1.0, float(np.max(np.abs(state.eta.coeffs))) if K else 1.0)
        for j in range(K + 2):
            h = step * (scale if j < K else max(1.0, abs(u0[j])))
            up_, dn = u0.copy(), u0.copy()
            up_[j] += h
            dn[j] -= h
            cols.append((self.residual_modes(ExtendedState.from_vector(up_))
                         - self.residual_modes(ExtendedState.from_vector(dn))) / (2 * h))
        if with_e0:
            e0 = self.params.e0
            h = step * max(1.0, abs(e0))
            plus = self.with_params(self.params.with_(e0=e0 + h)).residual_modes(state)
            minus = self.with_params(self.params.with_(e0=e0 - h)).residual_modes(state)
            cols.append((plus - minus) / (2 * h))
        return EtaJacobian(np.array(cols).T, K)


def assemble_residual(state: ExtendedState, p: WaveParams, grids=(64, 48), nmodes=None) -> ResidualVector:
    """Residual of the interfacial Bernoulli condition at ``state``.

    ``grids`` is either ``(M, N)`` or a ResidualModel to reuse.
    """
    model = grids if isinstance(grids, ResidualModel) else ResidualModel(
        p, *grids, nmodes=nmodes or max(state.eta.nmodes, 1))
    if model.params != p:
        model = model.with_params(p)
    return model.residual(model.state(state.eta, state.lam, state.q0))


def eta_jacobian(state: ExtendedState, p: WaveParams, grids=(64, 48), method="fd") -> EtaJacobian:
    model = grids if isinstance(grids, ResidualModel) else ResidualModel(
        p, *grids, nmodes=max(state.eta.nmodes, 1))
    if model.params != p:
        model = model.with_params(p)
    return model.jacobian(model.state(state.eta, state.lam, state.q0), method=method)


# ---------------------------------------------------------------------------
# closed-form derivatives at the flat state
# ---------------------------------------------------------------------------

def d_lambda_eta(k: int, lam: float, p: WaveParams) -> float:
    """Multiplier of cos(kq) in the mixed lam/eta derivative, i.e. dD_k/dlam."""
    t = tk(k)
    return -(2.0 / t) * (2.0 * lam - p.gamma * t)


def d_e0_eta(k: int, p: WaveParams) -> float:
    """dD_k/dE0 = -(4/T_k) eps0 E0."""
    return -(4.0 / tk(k)) * p.eps0 * p.e0


@dataclass(frozen=True)
class FlatPoint:
    """A flat state (lam, E0) at which the closed-form derivatives are evaluated."""

    lam: float
    params: WaveParams

    @property
    def e0(self) -> float:
        return self.params.e0


def _traces_of(profile: SurfaceProfile, at: FlatPoint, q):
    """eta, eta', and surface traces w_p, h_p of the first-order responses at q."""
    p = at.params
    c = profile.coeffs
    m = np.arange(1, c.size + 1)
    arg = np.multiply.outer(q, m)
    cos, sin = np.cos(arg), np.sin(arg)
    wk = np.array([w_trace(int(k), at.lam, p.gamma) for k in m])
    hk = np.array([h_trace(int(k), p.e0) for k in m])
    return (cos @ c, -(sin @ (m * c)), -(cos @ (m * m * c)), cos @ (wk * c), cos @ (hk * c))


def second_derivative(d1: SurfaceProfile, d2: SurfaceProfile, at: FlatPoint, q=None,
                      grid: StripGrid | None = None) -> ResidualVector | np.ndarray:
    """Closed-form second eta-derivative of the residual at a flat state.

    Symmetric polarization of

        2(lam^2 - eps0 E0^2)(eta'^2 + 3 eta^2) - 2 eps0 h_p^2 + 2 w_p^2
            - 8 eps0 E0 eta h_p - 8 lam eta w_p,

    where w_p, h_p are surface traces of the first-order field responses.
    Returns a ResidualVector on ``grid`` (default: 64-node grid) or raw values
    at the points ``q``.
    """
    p = at.params
    g = grid or StripGrid(64, 8, LOWER)
    pts = g.q if q is None else np.asarray(q, float)
    a, a1, _, wa, ha = _traces_of(d1, at, pts)
    b, b1, _, wb, hb = _traces_of(d2, at, pts)
    lam, e0 = at.lam, p.e0
    val = (2.0 * (lam**2 - p.eps0 * e0**2) * (a1 * b1 + 3.0 * a * b)
           - 2.0 * p.eps0 * ha * hb + 2.0 * wa * wb
           - 4.0 * p.eps0 * e0 * (a * hb + b * ha)
           - 4.0 * lam * (a * wb + b * wa))
    if q is not None:
        return val
    return ResidualVector(val, g.analysis @ val, g)


def third_derivative(d: SurfaceProfile, at: FlatPoint, q=None,
                     grid: StripGrid | None = None) -> ResidualVector | np.ndarray:
    """Closed-form third eta-derivative of the residual at a flat state (diagonal form).

        -12(lam^2 + eps0 E0^2) eta'^2 eta - 24(lam^2 + eps0 E0^2) eta^3 + 18 sigma eta'' eta'^2
        + 12 lam eta'^2 w_p + 36 lam eta^2 w_p - 12 eps0 E0 eta'^2 h_p - 36 eps0 E0 eta^2 h_p
        - 4 eta w_p^2 - 4 eps0 eta h_p^2
    """
    p = at.params
    g = grid or StripGrid(64, 8, LOWER)
    pts = g.q if q is None else np.asarray(q, float)
    e, e1, e2, w, h = _traces_of(d, at, pts)
    lam, e0, eps = at.lam, p.e0, p.eps0
    s = lam**2 + eps * e0**2
    val = (-12.0 * s * e1**2 * e - 24.0 * s * e**3 + 18.0 * p.sigma * e2 * e1**2
           + 12.0 * lam * e1**2 * w + 36.0 * lam * e**2 * w
           - 12.0 * eps * e0 * e1**2 * h - 36.0 * eps * e0 * e**2 * h
           - 4.0 * e * w**2 - 4.0 * eps * e * h**2)
    if q is not None:
        return val
    return ResidualVector(val, g.analysis @ val, g)


def second_derivative_projection(k: int, at: FlatPoint) -> float:
    """Projection of the cos(kq) diagonal second derivative onto cos(kq).

    Every term is a multiple of sin^2(kq) or cos^2(kq), so the projection
    vanishes identically; computed here from the discrete transform.
    """
    g = StripGrid(max(16, 8 * k), 8, LOWER)
    return second_derivative(SurfaceProfile.mode(k), SurfaceProfile.mode(k), at, grid=g).projection(k)


def third_derivative_projection(k: int, at: FlatPoint) -> float:
    """Closed form of <cos(kq), third derivative along cos(kq)> (nine terms)."""
    p = at.params
    t = tk(k)
    lam, e2 = at.lam, p.e0**2
    eps = p.eps0
    s = lam**2 + eps * e2
    w = ((p.gamma + lam) * t - lam) / t
    hq = (1.0 - t) / t
    return (-3.0 * k**2 * s - 18.0 * s - 4.5 * k**4 * p.sigma
            + 3.0 * k**2 * lam * w + 27.0 * lam * w
            - 3.0 * k**2 * eps * e2 * hq - 27.0 * eps * e2 * hq
            - 3.0 * w**2 - 3.0 * eps * hq**2 * e2)
