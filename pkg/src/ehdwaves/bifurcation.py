"""Bifurcation points, branch continuation and secondary branch switching.

Unknowns are packed as ``u = [eta_1..eta_K, q0, lam]``; the residual modes
0..K supply K+1 equations and one scalar constraint closes the system.  The
amplitude coordinate of a primary branch from mode k is ``s = eta_k``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .params import (
    WaveParams,
    admissible_field,
    bifurcation_speeds,
    resonance_field,
    tk,
)
from .residual import (
    ExtendedState,
    FlatPoint,
    NonfiniteResidualError,
    ResidualModel,
    d_e0_eta,
    d_lambda_eta,
    second_derivative,
    third_derivative,
)
from .strip import LOWER, SingularSystemError, StripGrid, SurfaceProfile, w_trace, h_trace

log = logging.getLogger(__name__)

__all__ = [
    "InadmissibleFieldError",
    "TransversalityError",
    "StepFailure",
    "DomainBreach",
    "KernelDimensionError",
    "DegenerateResonanceError",
    "SwitchFailedError",
    "NewtonFailure",
    "Sign",
    "BifurcationPoint",
    "BranchPoint",
    "Branch",
    "SingularityEvent",
    "ResonanceRecord",
    "ContinuationOptions",
    "NewtonResult",
    "newton",
    "symmetric_modes",
    "find_bifurcation_points",
    "bifurcation_point",
    "branch_direction",
    "reduced_direction",
    "point_at_amplitude",
    "continue_branch",
    "pitchfork_fit",
    "nondegeneracy_checks",
    "detect_singularities",
    "switch_branch",
    "tracked_eigenpair",
    "uniqueness_probe",
]


class InadmissibleFieldError(ValueError):
    pass


class TransversalityError(ArithmeticError):
    pass


class NewtonFailure(ArithmeticError):
    pass


class StepFailure(ArithmeticError):
    pass


class DomainBreach(ArithmeticError):
    pass


class KernelDimensionError(ValueError):
    pass


class DegenerateResonanceError(ArithmeticError):
    pass


class SwitchFailedError(ArithmeticError):
    pass


class Sign(str, Enum):
    PLUS = "plus"
    MINUS = "minus"


KERNEL_RTOL = 1e-6


@dataclass(frozen=True)
class BifurcationPoint:
    k: int
    sign: Sign
    lambda_star: float
    kernel_dim: int = 1
    partner_mode: int | None = None
    singular_values: tuple = ()

    @property
    def label(self) -> str:
        return f"k{self.k}{'+' if self.sign is Sign.PLUS else '-'}"


@dataclass
class BranchPoint:
    s: float
    state: ExtendedState
    residual_norm: float
    tracked_eigenvalue: float = float("nan")
    newton_iterations: int = 0
    extras: dict = field(default_factory=dict, repr=False)

    @property
    def lam(self) -> float:
        return self.state.lam


@dataclass
class SingularityEvent:
    s_bracket: tuple[float, float]
    s: float
    point: BranchPoint
    null_vector: np.ndarray
    mode: int
    monitor_bracket: tuple[float, float]
    kind: str = "sign_change"


@dataclass
class Branch:
    origin: BifurcationPoint | SingularityEvent
    points: list[BranchPoint]
    events: list[SingularityEvent] = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    @property
    def s(self) -> np.ndarray:
        return np.array([pt.s for pt in self.points])

    @property
    def lam(self) -> np.ndarray:
        return np.array([pt.lam for pt in self.points])

    def coefficients(self) -> np.ndarray:
        return np.array([pt.state.eta.coeffs for pt in self.points])


@dataclass
class ResonanceRecord:
    k: int
    l: int
    e_field: float
    lambda_star: float
    sign: Sign
    determinant1: float
    determinant1_closed: float
    determinant2: float
    determinant2_closed: float
    nondegenerate: bool = True

    @property
    def certified(self) -> bool:
        return self.nondegenerate


@dataclass(frozen=True)
class ContinuationOptions:
    tol: float = 1e-10
    ds0: float = 1e-3
    max_step: float = 1e-2
    min_step: float | None = None
    smax: float = 0.05
    max_halvings: int = 8
    easy_iterations: int = 3
    max_newton: int = 12
    method: str = "arclength"
    direction: int = 0  # +1, -1 or 0 for both
    max_points: int = 2000
    mode_threshold: float = 1e-4
    switch_points: int = 8
    symmetric: bool = True


# ---------------------------------------------------------------------------
# Newton corrector
# ---------------------------------------------------------------------------

@dataclass
class NewtonResult:
    u: np.ndarray
    residual: object
    jacobian: object
    iterations: int
    residual_norm: float

    @property
    def state(self) -> ExtendedState:
        return ExtendedState.from_vector(self.u)


def _linearize(model: ResidualModel, u):
    state = ExtendedState.from_vector(u)
    try:
        return model.linearize(state)
    except (SingularSystemError, NonfiniteResidualError, ValueError) as exc:
        raise NewtonFailure(str(exc)) from exc


def symmetric_modes(k: int, nmodes: int) -> list[int]:
    """Modes carried by a 2*pi/k-periodic profile."""
    return list(range(k, nmodes + 1, k))


def newton(model: ResidualModel, u0, constraint=None, *, tol=1e-10, max_iter=12, fixed=None,
           damping=False, modes=None) -> NewtonResult:
    """Solve the residual modes 0..K plus optional extra equations.

    ``constraint(u) -> (values, rows)`` appends equations; ``fixed`` lists
    indices of u held at their initial value (their columns are dropped).
    ``modes`` restricts unknowns and equations to the listed eta modes (the
    others are zeroed), which keeps symmetric branches regular where a
    symmetry-breaking eigenvalue crosses zero.  Convergence is declared on
    the solved equations (retained residual modes and constraints); the
    reported residual is the sup-norm over all nodes, which also carries the
    truncation error of the unretained modes.
    """
    u = np.array(u0, dtype=float)
    K = model.nmodes
    rows = np.arange(K + 1)
    if modes is not None:
        modes = sorted(set(modes))
        off = np.setdiff1d(np.arange(1, K + 1), modes) - 1
        u[off] = 0.0
        rows = np.array([0] + list(modes))
        fixed = np.concatenate([off, [] if fixed is None else np.atleast_1d(fixed)]).astype(int)
    free = np.setdiff1d(np.arange(u.size), [] if fixed is None else np.atleast_1d(fixed))
    prev = np.inf
    growth = 0
    for it in range(max_iter + 1):
        if np.max(np.abs(u[: model.nmodes])) >= 1.0:
            raise DomainBreach("sup|eta| reached 1")
        res, jac = _linearize(model, u)
        g = res.coeffs[rows]
        a = jac.matrix[rows]
        if constraint is not None:
            cv, crow = constraint(u)
            g = np.concatenate([g, np.atleast_1d(cv)])
            a = np.vstack([a, np.atleast_2d(crow)])
        cnorm = 0.0 if constraint is None else float(np.max(np.abs(np.atleast_1d(cv))))
        norm = max(float(np.max(np.abs(res.coeffs[rows]))), cnorm)
        if norm <= tol:
            return NewtonResult(u, res, jac, it, res.sup)
        if it == max_iter:
            break
        growth = growth + 1 if norm > prev else 0
        if growth >= 3 or not np.isfinite(norm):
            break
        prev = norm
        sub = a[:, free]
        try:
            if sub.shape[0] == sub.shape[1]:
                du = np.linalg.solve(sub, -g)
            else:
                du = np.linalg.lstsq(sub, -g, rcond=None)[0]
        except np.linalg.LinAlgError as exc:
            raise NewtonFailure(f"singular Newton matrix: {exc}") from exc
        step = 1.0
        if damping:
            # backtrack on the coefficient residual
            while step > 1.0 / 64:
                trial = u.copy()
                trial[free] += step * du
                try:
                    r2 = _linearize(model, trial)[0]
                except (NewtonFailure, DomainBreach):
                    step *= 0.5
                    continue
                if np.max(np.abs(r2.coeffs[rows])) < norm:
                    break
                step *= 0.5
        u[free] += step * du
    raise NewtonFailure(f"no convergence (last residual {norm:.3e} in the solved modes)")


# ---------------------------------------------------------------------------
# spectra of the eta-block
# ---------------------------------------------------------------------------

def tracked_eigenpair(block: np.ndarray, k: int, previous: np.ndarray | None = None):
    """Eigenvalue of ``block`` whose eigenvector best matches mode k (or ``previous``).

    Returns ``(value, vector, overlap)`` with the vector normalized and signed
    so that its mode-k entry is non-negative.
    """
    vals, vecs = np.linalg.eig(block)
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    ref = np.zeros(block.shape[0])
    ref[k - 1] = 1.0
    if previous is not None:
        ref = previous
    overlap = np.abs(ref.conj() @ vecs) / np.linalg.norm(ref)
    j = int(np.argmax(overlap))
    v = np.real_if_close(vecs[:, j], tol=1e6)
    v = np.real(v)
    if v[k - 1] < 0:
        v = -v
    return float(np.real(vals[j])), v, float(overlap[j])


def _monitor(block: np.ndarray, k: int):
    """Scale-free monitor of the non-tracked spectrum: sign of det/mu and min |eig|."""
    vals, vecs = np.linalg.eig(block)
    mags = np.abs(vecs[k - 1]) / np.linalg.norm(vecs, axis=0)
    j = int(np.argmax(mags))
    rest = np.delete(vals, j)
    sign = float(np.sign(np.prod(np.real(rest)[np.abs(np.imag(rest)) == 0])))
    real = rest[np.abs(np.imag(rest)) == 0].real
    nearest = float(real[np.argmin(np.abs(real))]) if real.size else np.inf
    sv = np.linalg.svd(block, compute_uv=False)
    return sign, nearest, float(np.median(sv)), vals[j].real


# ---------------------------------------------------------------------------
# primary bifurcation points
# ---------------------------------------------------------------------------

def _shared_root(k, l, p, lam, tol):
    roots = bifurcation_speeds(l, p)
    if roots is None:
        return False
    return any(abs(lam - r) <= tol * max(1.0, abs(lam)) for r in roots)


def find_bifurcation_points(p: WaveParams, kmax: int, model: ResidualModel | None = None, *,
                            validate: bool = True, resonance_tol: float = 1e-8) -> list[BifurcationPoint]:
    """All lam*_{k,+-}, k <= kmax, each checked against the discrete eta-block SVD."""
    if not admissible_field(p, kmax):
        raise InadmissibleFieldError("field violates (g + sigma k^2) T_k > eps0 E0^2")
    if validate and model is None:
        model = ResidualModel(p, nmodes=max(16, 2 * kmax))
    if model is not None and model.nmodes < kmax:
        raise ValueError("model keeps fewer modes than kmax")
    out = []
    for k in range(1, kmax + 1):
        roots = bifurcation_speeds(k, p)
        if roots is None:
            continue
        for sign, lam in zip((Sign.PLUS, Sign.MINUS), roots):
            partner = None
            nmax = model.nmodes if model is not None else kmax
            for l in range(1, nmax + 1):
                if l != k and _shared_root(k, l, p, lam, resonance_tol):
                    partner = l
                    break
            dim = 2 if partner else 1
            sv = ()
            if validate:
                jac = model.jacobian(model.trivial(lam))
                sv = np.linalg.svd(jac.eta_block, compute_uv=False)
                scale = float(np.median(sv))
                dim = int(np.sum(sv < KERNEL_RTOL * scale))
                sv = tuple(np.sort(sv)[:3])
            out.append(BifurcationPoint(k, sign, float(lam), dim, partner, sv))
    return out


def bifurcation_point(k: int, sign: Sign | str, p: WaveParams) -> BifurcationPoint:
    """The primary point lam*_{k,sign} without discrete validation."""
    sign = Sign(sign)
    roots = bifurcation_speeds(k, p)
    if roots is None:
        raise InadmissibleFieldError(f"mode {k} has no real bifurcation speed")
    lam = roots[0] if sign is Sign.PLUS else roots[1]
    return BifurcationPoint(k, sign, float(lam))


# ---------------------------------------------------------------------------
# bifurcation direction
# ---------------------------------------------------------------------------

def _transversality(bp: BifurcationPoint, p: WaveParams) -> float:
    d = d_lambda_eta(bp.k, bp.lambda_star, p)
    if abs(d) <= 1e-12 * (1.0 + abs(bp.lambda_star)) / tk(bp.k):
        raise TransversalityError("mixed derivative vanishes (double root)")
    return d


def branch_direction(bp: BifurcationPoint, p: WaveParams) -> tuple[float, float]:
    """``(lam'(0), lam''(0))`` from the closed-form flat-state derivatives.

    lam'(0) = -<l, F2[x*,x*]> / (2 <l, F_lam_eta x*>),
    lam''(0) = -<l, F3[x*,x*,x*]> / (3 <l, F_lam_eta x*>).
    """
    if bp.kernel_dim != 1:
        raise KernelDimensionError("direction formulas need a one-dimensional kernel")
    d = _transversality(bp, p)
    at = FlatPoint(bp.lambda_star, p)
    grid = StripGrid(max(16, 8 * bp.k), 8, LOWER)
    x = SurfaceProfile.mode(bp.k)
    f2 = second_derivative(x, x, at, grid=grid).projection(bp.k)
    f3 = third_derivative(x, at, grid=grid).projection(bp.k)
    return -f2 / (2.0 * d), -f3 / (3.0 * d)


def _fd_directional(model, state, dirs, h):
    """Mixed central differences of residual coefficients along coefficient directions."""
    u0 = state.vector()

    def f(v):
        return model.residual_modes(ExtendedState.from_vector(u0 + np.concatenate([v, [0.0, 0.0]])))

    if len(dirs) == 2:
        a, b = dirs
        return (f(h * (a + b)) - f(h * (a - b)) - f(h * (b - a)) + f(-h * (a + b))) / (4 * h * h)
    (a,) = dirs
    return (f(2 * h * a) - 2 * f(h * a) + 2 * f(-h * a) - f(-2 * h * a)) / (2 * h**3)


def _richardson(fun, h, order):
    return (2**order * fun(h / 2) - fun(h)) / (2**order - 1)


def reduced_direction(bp: BifurcationPoint, model: ResidualModel, h: float = 2e-3) -> dict:
    """lam''(0) by Lyapunov-Schmidt reduction of the discrete residual.

    Unlike the closed form, this includes the second-order field responses and
    the quadratic correction x2 solving F_eta x2 = -F2[x*,x*] off the kernel:

        lam''(0) = -(<l, F3[x*]^3> + 3 <l, F2[x*, x2]>) / (3 <l, F_lam_eta x*>).

    Derivatives are Richardson-extrapolated central differences.
    """
    k, K = bp.k, model.nmodes
    st = model.trivial(bp.lambda_star)
    e = np.zeros(K)
    e[k - 1] = 1.0
    f2 = _richardson(lambda hh: _fd_directional(model, st, [e, e], hh), h, 2)
    jac = model.jacobian(st)
    a = jac.with_mean
    keep_rows = [r for r in range(K + 1) if r != k]
    keep_cols = [c for c in range(K + 1) if c != k - 1]
    sol = np.linalg.solve(a[np.ix_(keep_rows, keep_cols)], -f2[keep_rows])
    x2 = np.zeros(K)
    x2[[c for c in keep_cols if c < K]] = sol[:-1]
    f3 = _richardson(lambda hh: _fd_directional(model, st, [e], hh), h, 2)
    f2x = _richardson(lambda hh: _fd_directional(model, st, [e, x2], hh), h, 2)
    hl = 1e-5 * max(1.0, abs(bp.lambda_star))
    d = (model.jacobian(model.trivial(bp.lambda_star + hl)).eta_block[k - 1, k - 1]
         - model.jacobian(model.trivial(bp.lambda_star - hl)).eta_block[k - 1, k - 1]) / (2 * hl)
    lam2 = -(f3[k] + 3.0 * f2x[k]) / (3.0 * d)
    return {"lambda_pp": float(lam2), "f2_projection": float(f2[k]), "f3_projection": float(f3[k]),
            "f2_cross_projection": float(f2x[k]), "x2": x2, "d_lambda_eta": float(d),
            "lambda_pp_without_x2": float(-f3[k] / (3.0 * d))}


# ---------------------------------------------------------------------------
# continuation
# ---------------------------------------------------------------------------

def _amplitude_constraint(k, s):
    def c(u):
        row = np.zeros(u.size)
        row[k - 1] = 1.0
        return u[k - 1] - s, row
    return c


def _make_point(k, res: NewtonResult, previous_vec=None):
    st = res.state
    mu, vec, overlap = tracked_eigenpair(res.jacobian.eta_block, k, previous_vec)
    sign, nearest, median, _ = _monitor(res.jacobian.eta_block, k)
    return BranchPoint(float(st.eta.coeffs[k - 1]), st, res.residual_norm, mu, res.iterations,
                       {"eigvec": vec, "overlap": overlap, "monitor_sign": sign,
                        "monitor_nearest": nearest, "monitor_median": median,
                        "eta_block": res.jacobian.eta_block, "lam_column": res.jacobian.lam_column})


def point_at_amplitude(model: ResidualModel, k: int, s: float, guess=None, *, tol=1e-10,
                       max_iter=12, symmetric: bool = True) -> BranchPoint:
    """Converged branch point with eta_k = s (natural parametrization).

    With ``symmetric`` the solve is restricted to modes that are multiples of k.
    """
    if guess is None:
        raise ValueError("need an initial guess")
    u0 = guess.vector() if isinstance(guess, ExtendedState) else np.asarray(guess, float).copy()
    u0[k - 1] = s
    modes = symmetric_modes(k, model.nmodes) if symmetric else None
    res = newton(model, u0, _amplitude_constraint(k, s), tol=tol, max_iter=max_iter, modes=modes)
    return _make_point(k, res)


def _tangent(jac, modes):
    """Null vector of the bordered Jacobian restricted to ``modes``, embedded in full u."""
    K = jac.nmodes
    rows = [0] + list(modes)
    cols = [m - 1 for m in modes] + [K, K + 1]
    _, _, vt = np.linalg.svd(jac.matrix[np.ix_(rows, cols)])
    t = np.zeros(K + 2)
    t[cols] = vt[-1]
    return t


def _continue_one_side(bp, model, opts, direction, start=None):
    k = bp.k
    K = model.nmodes
    u = model.trivial(bp.lambda_star).vector()
    modes = symmetric_modes(k, K) if opts.symmetric else list(range(1, K + 1))
    origin = point_at_amplitude(model, k, 0.0, u, tol=opts.tol, max_iter=opts.max_newton,
                                symmetric=opts.symmetric)
    pts = []
    t = np.zeros(u.size)
    t[k - 1] = float(direction)
    ds = opts.ds0
    min_step = opts.min_step or opts.ds0 / 2**opts.max_halvings
    easy = 0
    prev = origin
    if start is not None:
        # resume from a stored state; it is re-converged but not returned
        s0 = float(start.eta.coeffs[k - 1])
        res = newton(model, start.vector(), _amplitude_constraint(k, s0), tol=opts.tol,
                     max_iter=opts.max_newton, modes=modes)
        prev = _make_point(k, res)
        t = _tangent(res.jacobian, modes)
        if t[k - 1] * direction < 0:
            t = -t
    status, message = "ok", ""
    while len(pts) < opts.max_points:
        s_prev = prev.s
        if abs(s_prev) >= opts.smax - 1e-15:
            break
        halvings = 0
        while True:
            u_prev = prev.state.vector()
            pred = u_prev + ds * t
            try:
                if abs(pred[k - 1]) >= opts.smax or opts.method == "natural":
                    target = pred[k - 1]
                    if abs(target) >= opts.smax:
                        target = np.sign(target) * opts.smax
                    pred[k - 1] = target
                    res = newton(model, pred, _amplitude_constraint(k, target), tol=opts.tol,
                                 max_iter=opts.max_newton, modes=modes)
                else:
                    t_fixed, p_fixed = t.copy(), pred.copy()

                    def arc(v, t_fixed=t_fixed, p_fixed=p_fixed):
                        return float(t_fixed @ (v - p_fixed)), t_fixed

                    res = newton(model, pred, arc, tol=opts.tol, max_iter=opts.max_newton,
                                 modes=modes)
                break
            except DomainBreach as exc:
                status, message = "domain_breach", str(exc)
                return origin, pts, status, message
            except NewtonFailure as exc:
                halvings += 1
                ds *= 0.5
                easy = 0
                if halvings > opts.max_halvings or ds < min_step:
                    status, message = "step_failure", str(exc)
                    return origin, pts, status, message
        pt = _make_point(k, res, prev.extras.get("eigvec") if pts else None)
        if pt.extras["overlap"] < 0.7:
            pt.extras["tracking_lost"] = True
        pts.append(pt)
        # tangent from the bordered Jacobian, oriented along the previous one
        t_new = _tangent(res.jacobian, modes)
        if t_new @ t < 0:
            t_new = -t_new
        t = t_new
        easy = easy + 1 if res.iterations <= opts.easy_iterations else 0
        if easy >= 3:
            ds = min(2.0 * ds, opts.max_step)
            easy = 0
        prev = pt
    return origin, pts, status, message


def continue_branch(bp: BifurcationPoint, model: ResidualModel | None = None,
                    opts: ContinuationOptions | None = None, p: WaveParams | None = None,
                    *, start: dict | None = None) -> Branch:
    """Continue the primary branch from ``bp`` out to ``|s| = opts.smax``.

    Points are ordered by arclength from the most negative s to the most
    positive; the origin (s = 0) is included.  ``start`` maps a direction
    (+1 or -1) to a stored end state; that side then resumes from it and
    the returned branch holds only the new points of that side.
    """
    opts = opts or ContinuationOptions()
    if bp.kernel_dim != 1:
        raise KernelDimensionError(
            "two-dimensional kernel: perturb E0 off E_{k,l} and use the secondary sweep")
    if model is None:
        model = ResidualModel(p)
    dirs = (1, -1) if opts.direction == 0 else (opts.direction,)
    sides = {}
    status, message = "ok", ""
    origin = None
    if opts.smax <= 0:
        origin = point_at_amplitude(model, bp.k, 0.0, model.trivial(bp.lambda_star), tol=opts.tol,
                                    symmetric=opts.symmetric)
        return Branch(bp, [origin])
    for d in dirs:
        origin, pts, st, msg = _continue_one_side(bp, model, opts, d, (start or {}).get(d))
        sides[d] = pts
        if st != "ok":
            status, message = st, msg
    points = list(reversed(sides.get(-1, []))) + [origin] + sides.get(1, [])
    return Branch(bp, points, status=status, message=message)


def pitchfork_fit(s, lam, lambda_star: float, *, degree: int = 4) -> dict:
    """Least-squares polynomial fit of lam(s) - lam* through s = 0.

    Returns the fitted slope lam'(0), curvature lam''(0) = 2 c_2 and the
    rms misfit.  The degree drops when too few points are available.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(lam, dtype=float) - lambda_star
    deg = min(degree, s.size - 1)
    if deg < 2:
        raise ValueError("need at least three points to fit a curvature")
    scale = float(np.max(np.abs(s)))
    # fit in scaled s for conditioning
    c = np.polynomial.polynomial.polyfit(s / scale, y, deg)
    rms = float(np.sqrt(np.mean((np.polynomial.polynomial.polyval(s / scale, c) - y) ** 2)))
    return {"lambda_prime": float(c[1] / scale), "lambda_pp": float(2.0 * c[2] / scale**2),
            "offset": float(c[0]), "rms": rms, "degree": int(deg), "points": int(s.size),
            "s_max": scale}


# ---------------------------------------------------------------------------
# resonance nondegeneracy
# ---------------------------------------------------------------------------

def nondegeneracy_checks(k: int, l: int, p: WaveParams, *, threshold: float = 1e-10,
                         strict: bool = True) -> ResonanceRecord:
    """Both nondegeneracy determinants at E0^2 = E_{k,l}.

    ``p.e0`` is ignored; the shared speed is whichever sign pair coincides.
    With ``strict`` a vanishing determinant raises DegenerateResonanceError.
    """
    e2 = resonance_field(k, l, p)
    if e2 is None:
        raise DegenerateResonanceError(f"resonance condition fails for ({k},{l})")
    q = p.with_field_squared(e2)
    rk, rl = bifurcation_speeds(k, q), bifurcation_speeds(l, q)
    diffs = [abs(rk[0] - rl[0]), abs(rk[1] - rl[1])]
    j = int(np.argmin(diffs))
    lam = 0.5 * (rk[j] + rl[j])
    sign = Sign.PLUS if j == 0 else Sign.MINUS
    at = FlatPoint(lam, q)
    tk_, tl = tk(k), tk(l)
    a11, a21 = d_lambda_eta(k, lam, q), d_lambda_eta(l, lam, q)
    det1 = a11 * d_e0_eta(l, q) - d_e0_eta(k, q) * a21
    det1_closed = 8.0 * q.gamma * q.eps0 * q.e0 * (tl - tk_) / (tk_ * tl)
    grid = StripGrid(max(16, 8 * max(k, l)), 8, LOWER)
    xk, xl = SurfaceProfile.mode(k), SurfaceProfile.mode(l)
    b11 = second_derivative(xk, xk, at, grid=grid).projection(k)
    b21 = second_derivative(xk, xl, at, grid=grid).projection(l)
    det2 = a11 * b21 - b11 * a21
    # closed form with the coefficient M multiplying (1/pi) int cos(kq) cos^2(lq)
    wk, wl = w_trace(k, lam, q.gamma), w_trace(l, lam, q.gamma)
    hk, hl = h_trace(k, q.e0), h_trace(l, q.e0)
    big_m = (6.0 * (lam**2 - q.field_energy) - 2.0 * q.eps0 * hk * hl + 2.0 * wk * wl
             - 8.0 * q.eps0 * q.e0 * hk - 8.0 * lam * wk)
    # (1/pi) int cos(kq) cos^2(lq) dq over a period
    integral = 0.5 if k == 2 * l else 0.0
    det2_closed = a11 * big_m * integral
    rec = ResonanceRecord(k, l, e2, float(lam), sign, float(det1), float(det1_closed),
                          float(det2), float(det2_closed))
    scale1 = abs(a11 * d_e0_eta(k, q)) + abs(a21 * d_e0_eta(l, q))
    rec.nondegenerate = not (abs(det1) <= threshold * max(scale1, 1.0)
                             or abs(det2) <= threshold * max(abs(a11 * b21), abs(b11 * a21), 1.0))
    if strict and not rec.nondegenerate:
        raise DegenerateResonanceError(f"nondegeneracy fails: det1={det1:.3e}, det2={det2:.3e}")
    return rec


# ---------------------------------------------------------------------------
# singularity detection and branch switching
# ---------------------------------------------------------------------------

def _untracked_product(pt, k):
    """Product of the real eta-block eigenvalues other than the tracked one, median-scaled.

    Continuous in s and well defined at s = 0, where the tracked one vanishes.
    """
    block = pt.extras["eta_block"]
    vals, vecs = np.linalg.eig(block)
    mags = np.abs(vecs[k - 1]) / np.linalg.norm(vecs, axis=0)
    rest = np.delete(vals, int(np.argmax(mags)))
    scale = np.median(np.abs(vals))
    return float(np.prod(np.real(rest) / scale))


def _null_direction(pt, k):
    vals, vecs = np.linalg.eig(pt.extras["eta_block"])
    mags = np.abs(vecs[k - 1]) / np.linalg.norm(vecs, axis=0)
    tracked = int(np.argmax(mags))
    j = next(int(i) for i in np.argsort(np.abs(vals)) if i != tracked)
    v = np.real(vecs[:, j])
    v = v / np.linalg.norm(v)
    mode = int(np.argmax(np.abs(v))) + 1
    return (-v if v[mode - 1] < 0 else v), mode


def detect_singularities(branch: Branch, model: ResidualModel, *, threshold: float = 1e-5,
                         xtol: float = 1e-10, tol: float = 1e-10) -> list[SingularityEvent]:
    """Bracket and refine points where a non-tracked eta-block eigenvalue crosses zero.

    The primary trigger is a sign change of the product of non-tracked
    eigenvalues between consecutive points; brackets are refined in s by
    Brent's method to ``xtol``.  On a branch without sign
    changes anywhere, a non-tracked eigenvalue below ``threshold`` times the
    median singular value is reported as a dip event at the smaller endpoint.
    """
    k = branch.origin.k
    pts = branch.points
    events, dips = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        side = np.sign(a.s + b.s)
        if a.extras["monitor_sign"] == b.extras["monitor_sign"]:
            ratio = [abs(x.extras["monitor_nearest"]) / x.extras["monitor_median"] for x in (a, b)]
            if min(ratio) < threshold:
                dips.append((side, a, b, ratio))
            continue
        guess = {"state": a.state if a.s != 0.0 else b.state}
        known = {a.s: a, b.s: b}

        def f(s):
            # endpoints are reused: at s = 0 the amplitude constraint leaves lam free
            pt = known.get(s) or point_at_amplitude(model, k, s, guess["state"], tol=tol)
            guess["state"] = pt.state
            return _untracked_product(pt, k)

        s_star = brentq(f, a.s, b.s, xtol=xtol, rtol=4 * np.finfo(float).eps)
        pt = known.get(s_star) or point_at_amplitude(model, k, s_star, guess["state"], tol=tol)
        v, mode = _null_direction(pt, k)
        events.append(SingularityEvent((a.s, b.s), float(s_star), pt, v, mode,
                                       (a.extras["monitor_nearest"], b.extras["monitor_nearest"])))
    for side, a, b, ratio in dips if not events else ():
        pt = a if ratio[0] <= ratio[1] else b
        v, mode = _null_direction(pt, k)
        events.append(SingularityEvent((a.s, b.s), pt.s, pt, v, mode,
                                       (a.extras["monitor_nearest"], b.extras["monitor_nearest"]), "dip"))
    events.sort(key=lambda e: abs(e.s))
    branch.events = events
    return events


def switch_branch(event: SingularityEvent, model: ResidualModel,
                  opts: ContinuationOptions | None = None) -> Branch:
    """Secondary branch through ``event``, parametrized by the amplitude of the null mode.

    Predictor: event point + eps * null vector with eps = 10 sqrt(tol), retried
    at 3x and 10x.  Then ``opts.switch_points`` points at eta_l = j * eps.
    """
    opts = opts or ContinuationOptions()
    l = event.mode
    u_e = event.point.state.vector()
    v = np.concatenate([event.null_vector / event.null_vector[l - 1], [0.0, 0.0]])
    base = 10.0 * np.sqrt(opts.tol)
    first, eps = None, None
    for factor in (1.0, 3.0, 10.0):
        e = base * factor
        try:
            res = newton(model, u_e + e * v, _amplitude_constraint(l, e), tol=opts.tol,
                         max_iter=opts.max_newton)
        except (NewtonFailure, DomainBreach):
            continue
        if abs(res.u[l - 1]) >= opts.mode_threshold:
            first, eps = res, e
            break
    if first is None:
        raise SwitchFailedError("Newton did not leave the primary branch")
    pts = [_make_point(l, first)]
    u_prev, u_curr = u_e, first.u
    a_prev, a_curr = 0.0, eps
    for j in range(2, opts.switch_points + 1):
        target = j * eps
        pred = u_curr + (u_curr - u_prev) * (target - a_curr) / (a_curr - a_prev)
        try:
            res = newton(model, pred, _amplitude_constraint(l, target), tol=opts.tol,
                         max_iter=opts.max_newton)
        except (NewtonFailure, DomainBreach) as exc:
            return Branch(event, pts, status="step_failure", message=str(exc))
        pts.append(_make_point(l, res))
        u_prev, u_curr, a_prev, a_curr = u_curr, res.u, a_curr, target
    return Branch(event, pts)


# ---------------------------------------------------------------------------
# local uniqueness probe
# ---------------------------------------------------------------------------

@dataclass
class ProbeOutcome:
    start: np.ndarray
    lam: float
    converged: bool
    family: str  # "trivial", "branch", "other" or "unconverged"
    distance: float
    s: float = 0.0


def uniqueness_probe(bp: BifurcationPoint, model: ResidualModel, *, n: int = 50, rho: float = 0.05,
                     rho_lam: float | None = None, seed: int = 0, tol: float = 1e-10,
                     match_tol: float = 1e-6, max_iter: int = 40) -> list[ProbeOutcome]:
    """Random fixed-lam Newton starts with |lam - lam*| <= rho_lam, ||eta|| <= rho.

    ``rho_lam`` defaults to ``rho**2``, the scale on which the pitchfork's
    nontrivial solutions lie.  Each converged solution is classified as
    trivial or compared against the primary branch recomputed at its own
    amplitude s = eta_k.
    """
    rho_lam = rho * rho if rho_lam is None else rho_lam
    rng = np.random.default_rng(seed)
    K, k = model.nmodes, bp.k
    base = model.trivial(bp.lambda_star).vector()
    out = []
    for _ in range(n):
        lam = bp.lambda_star + rho_lam * rng.uniform(-1.0, 1.0)
        eta = rng.normal(size=K) / np.arange(1, K + 1) ** 2
        eta *= rho * np.sqrt(rng.uniform()) / np.linalg.norm(eta)
        u0 = np.concatenate([eta, [0.0, lam]])
        try:
            res = newton(model, u0, None, tol=tol, max_iter=max_iter, fixed=[K + 1], damping=True)
        except (NewtonFailure, DomainBreach):
            out.append(ProbeOutcome(u0, lam, False, "unconverged", np.inf))
            continue
        u = res.u
        if np.linalg.norm(u[:K]) <= match_tol and abs(u[K]) <= match_tol:
            out.append(ProbeOutcome(u0, lam, True, "trivial", float(np.linalg.norm(u[: K + 1]))))
            continue
        s = float(u[k - 1])
        try:
            ref = point_at_amplitude(model, k, s, base + np.eye(base.size)[k - 1] * s, tol=tol)
            dist = float(np.max(np.abs(ref.state.vector() - u)))
        except (NewtonFailure, DomainBreach):
            dist = np.inf
        fam = "branch" if dist <= match_tol else "other"
        out.append(ProbeOutcome(u0, lam, True, fam, dist, s))
    return out
