"""Formal stability of trivial and bifurcating solutions.

Stability is read off the sign of the crossing eigenvalue: the trivial
eigenvalue D_k(lam) of the bifurcating mode, and along a branch the
eigenvalue mu(s) of the eta-block Jacobian that continues it.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .bifurcation import (
    BifurcationPoint,
    Branch,
    BranchPoint,
    TransversalityError,
    point_at_amplitude,
    tracked_eigenpair,
)
from .params import DegenerateRootError, WaveParams, bifurcation_speeds, dispersion
from .residual import d_lambda_eta

__all__ = [
    "Stability",
    "StabilityLabel",
    "SpectrumReport",
    "TrackingLostError",
    "MultiplePointsError",
    "trivial_spectrum",
    "crossing_slope",
    "classify_trivial",
    "branch_eigenvalue",
    "classify_branch",
    "exchange_ratio",
]

NEUTRAL_TOL = 1e-10


class TrackingLostError(RuntimeError):
    pass


class MultiplePointsError(ValueError):
    pass


class Stability(str, Enum):
    FORMALLY_STABLE = "formally_stable"
    UNSTABLE = "unstable"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class StabilityLabel:
    label: Stability
    tracked_eigenvalue: float

    @classmethod
    def from_eigenvalue(cls, mu: float, tol: float = NEUTRAL_TOL) -> "StabilityLabel":
        if abs(mu) <= tol:
            return cls(Stability.NEUTRAL, mu)
        return cls(Stability.FORMALLY_STABLE if mu < 0 else Stability.UNSTABLE, mu)


@dataclass(frozen=True)
class SpectrumReport:
    lam: float
    eigenvalues: dict
    crossing_mode: int

    @property
    def all_negative(self) -> bool:
        return all(v < 0 for v in self.eigenvalues.values())


def trivial_spectrum(lam: float, p: WaveParams, nmax: int) -> SpectrumReport:
    """Eigenvalues D_n(lam), n = 1..nmax, of the linearization at the flat state."""
    if nmax < 1:
        raise ValueError("nmax must be >= 1")
    ev = {n: dispersion(n, lam, p) for n in range(1, nmax + 1)}
    crossing = min(ev, key=lambda n: abs(ev[n]))
    return SpectrumReport(lam, ev, crossing)


def crossing_slope(bp: BifurcationPoint, p: WaveParams) -> float:
    """beta'(lam*) = dD_k/dlam at the bifurcation point."""
    if bp.kernel_dim != 1:
        raise TransversalityError("crossing slope needs a simple eigenvalue")
    # re-derive the roots to flag double roots
    try:
        bifurcation_speeds(bp.k, p)
    except DegenerateRootError as exc:
        raise TransversalityError(str(exc)) from exc
    return d_lambda_eta(bp.k, bp.lambda_star, p)


def _other_points(lo, hi, bp, p, nmax):
    hits = []
    for n in range(1, nmax + 1):
        roots = bifurcation_speeds(n, p)
        if roots is None:
            continue
        for r in roots:
            if lo <= r <= hi and not (n == bp.k and abs(r - bp.lambda_star) <= 1e-12 * max(1.0, abs(r))):
                hits.append((n, r))
    return hits


def classify_trivial(lambdas, bp: BifurcationPoint, p: WaveParams, *, nmax: int = 32,
                     tol: float = 1e-12) -> dict:
    """Label flat states at each lam by the sign of D_k(lam), k the crossing mode of ``bp``.

    Raises MultiplePointsError when the sampled range contains another
    bifurcation point (of any mode up to ``nmax``).
    """
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    lo, hi = float(lambdas.min()), float(lambdas.max())
    others = _other_points(lo, hi, bp, p, nmax)
    if others:
        raise MultiplePointsError(f"range [{lo}, {hi}] also contains {others}")
    out = {}
    for lam in lambdas:
        d = dispersion(bp.k, lam, p)
        scale = 2.0 / np.tanh(bp.k) * bp.k * max(1.0, lam * lam)
        out[float(lam)] = StabilityLabel.from_eigenvalue(d, tol * scale)
    return out


def branch_eigenvalue(point: BranchPoint, origin: BifurcationPoint, previous=None,
                      *, min_overlap: float = 0.7) -> float:
    """Eigenvalue of the eta-block at ``point`` that continues the zero eigenvalue of mode k.

    The eta-block is the Jacobian with lam and q0 frozen.  ``previous`` is an
    eigenvector from a neighbouring point for continuous tracking.
    """
    block = point.extras.get("eta_block")
    if block is None:
        raise ValueError("branch point carries no Jacobian")
    mu, vec, overlap = tracked_eigenpair(block, origin.k, previous)
    ref_overlap = abs(vec[origin.k - 1])
    if max(overlap, ref_overlap) < min_overlap:
        raise TrackingLostError(f"overlap {max(overlap, ref_overlap):.3f} below {min_overlap}")
    return mu


def classify_branch(branch: Branch, *, tol: float = NEUTRAL_TOL) -> list[StabilityLabel]:
    """Per-point labels from the tracked eigenvalue, walking outward from s = 0."""
    origin = branch.origin
    pts = branch.points
    i0 = int(np.argmin([abs(pt.s) for pt in pts]))
    mus = [np.nan] * len(pts)
    for order in (range(i0, len(pts)), range(i0, -1, -1)):
        prev = None
        for i in order:
            pt = pts[i]
            mu = branch_eigenvalue(pt, origin, prev)
            prev = tracked_eigenpair(pt.extras["eta_block"], origin.k, prev)[1]
            mus[i] = mu
    labels = []
    for pt, mu in zip(pts, mus):
        pt.tracked_eigenvalue = mu
        labels.append(StabilityLabel.from_eigenvalue(mu, tol))
    return labels


def exchange_ratio(bp: BifurcationPoint, model, s_values, *, h: float = 1e-4,
                   tol: float = 1e-10) -> list[tuple[float, float, float]]:
    """``(s, s*lam'(s)/mu(s), -1/beta'(lam*))`` at the requested amplitudes.

    Branch points are solved at exactly s and s +- h; lam'(s) is the central
    difference of lam and mu(s) the tracked eigenvalue at s.
    """
    p = model.params
    target = -1.0 / crossing_slope(bp, p)
    guess = model.trivial(bp.lambda_star)
    out = []
    for sv in s_values:
        pts = {}
        for off in (-h, 0.0, h):
            g = guess.vector()
            pts[off] = point_at_amplitude(model, bp.k, sv + off, g, tol=tol)
            guess = pts[off].state
        dlam = (pts[h].lam - pts[-h].lam) / (2 * h)
        mu = branch_eigenvalue(pts[0.0], bp)
        out.append((float(sv), float(sv * dlam / mu), float(target)))
    return out
