"""Physical parameters and the closed-form algebra of the flat state.

Everything here is normalized to unit depth and period 2*pi.  With
``T_k = tanh(k)/k`` the linearization about the flat interface acts on
``cos(kq)`` by the scalar

    D_k(lam) = -(2/T_k) * (lam**2 - gamma*T_k*lam + eps0*E0**2 - (g + sigma*k**2)*T_k)

and its two roots are the bifurcation speeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "WaveParams",
    "TrivialState",
    "DegenerateRootError",
    "VorticityRequiredError",
    "tk",
    "dispersion",
    "dispersion_coefficients",
    "bifurcation_speeds",
    "admissible_field",
    "resonance_condition",
    "resonance_field",
    "trivial_constants",
    "sweep_resonant_vorticity",
]

DEGENERATE_RTOL = 1e-14


class DegenerateRootError(ArithmeticError):
    """The speed quadratic has a (numerically) double root."""


class VorticityRequiredError(ValueError):
    """Resonance fields are undefined without vorticity."""


@dataclass(frozen=True)
class WaveParams:
    """Nondimensional constants of the two-layer problem (depth 1, period 2*pi).

    ``e0`` is the far-field electric strength; only ``eps0 * e0**2`` enters the
    dispersion relation, but the sign of ``e0`` fixes the sign of the voltage.
    """

    g: float = 1.0
    sigma: float = 1.0
    gamma: float = 0.0
    eps0: float = 1.0
    e0: float = 0.0

    def __post_init__(self):
        for name in ("g", "sigma", "gamma", "eps0", "e0"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.g <= 0:
            raise ValueError("g must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.eps0 <= 0:
            raise ValueError("eps0 must be positive")

    @property
    def field_energy(self) -> float:
        """``eps0 * e0**2``, the only combination of the field seen by D_k."""
        return self.eps0 * self.e0**2

    def with_(self, **changes) -> "WaveParams":
        return replace(self, **changes)

    def with_field_squared(self, e0_squared: float) -> "WaveParams":
        if e0_squared < 0:
            raise ValueError("E0**2 must be non-negative")
        return replace(self, e0=math.sqrt(e0_squared))


@dataclass(frozen=True)
class TrivialState:
    lam: float
    m: float
    q: float


def tk(k) -> float:
    """tanh(k)/k; positive and strictly decreasing on k >= 1."""
    if np.any(np.asarray(k) < 1):
        raise ValueError("mode index must be >= 1")
    return np.tanh(k) / k


def dispersion_coefficients(k: int, p: WaveParams) -> tuple[float, float, float]:
    """Monic quadratic ``lam**2 + b*lam + c`` whose roots are the speeds of mode k."""
    t = tk(k)
    b = -p.gamma * t
    c = p.field_energy - (p.g + p.sigma * k * k) * t
    return b, c, t


def dispersion(k: int, lam, p: WaveParams):
    b, c, t = dispersion_coefficients(k, p)
    lam = np.asarray(lam, dtype=float)
    out = -(2.0 / t) * (lam * lam + b * lam + c)
    return float(out) if out.ndim == 0 else out


def bifurcation_speeds(k: int, p: WaveParams) -> tuple[float, float] | None:
    """Roots ``(lam_plus, lam_minus)`` of D_k, or None when they are complex.

    Raises DegenerateRootError if the discriminant vanishes to within
    ``1e-14`` of the size of its terms.
    """
    b, c, t = dispersion_coefficients(k, p)
    half = -0.5 * b
    gt = (p.g + p.sigma * k * k) * t
    disc = half * half - c
    scale = max(half * half, gt, p.field_energy, np.finfo(float).tiny)
    if abs(disc) <= DEGENERATE_RTOL * scale:
        raise DegenerateRootError(f"double root for mode {k}: discriminant {disc:.3e}")
    if disc < 0:
        return None
    root = math.sqrt(disc)
    # larger-magnitude root directly, the other from the product c
    if half >= 0:
        plus = half + root
        minus = c / plus if plus != 0 else half - root
    else:
        minus = half - root
        plus = c / minus if minus != 0 else half + root
    return plus, minus


def _tail_certified(p: WaveParams, k: int) -> bool:
    # g*T_k decreases and sigma*k*tanh(k) increases; once the latter alone
    # clears eps0*E0**2 every larger mode passes
    return p.sigma * k * math.tanh(k) > p.field_energy


def admissible_field(p: WaveParams, kmax: int, *, return_mode: bool = False):
    """Check ``(g + sigma k^2) T_k > eps0 E0^2`` for every mode k >= 1.

    Modes up to ``kmax`` are checked explicitly; beyond that checking continues
    until the monotone tail bound certifies all remaining modes.  With
    ``sigma == 0`` and a nonzero field the tail can never be certified and the
    answer is False.
    """
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    fe = p.field_energy
    k = 1
    while True:
        if (p.g + p.sigma * k * k) * tk(k) <= fe:
            return (False, k) if return_mode else False
        if k >= kmax and (fe == 0.0 or _tail_certified(p, k)):
            return (True, None) if return_mode else True
        if p.sigma == 0.0 and k >= kmax:
            # g*T_k -> 0, so some mode eventually fails
            return (False, None) if return_mode else False
        k += 1


def resonance_condition(k: int, l: int, p: WaveParams) -> tuple[float, float]:
    """Both sides of the resonance inequality; it holds when lhs > rhs."""
    tk_, tl = tk(k), tk(l)
    lhs = p.sigma * p.gamma**2 * (l * l - k * k) * tk_ * tl * (tk_ - tl)
    rhs = ((p.g + p.sigma * k * k) * tk_ - (p.g + p.sigma * l * l) * tl) ** 2
    return lhs, rhs


def resonance_field(k: int, l: int, p: WaveParams) -> float | None:
    """Squared field strength E_{k,l} at which modes k and l share a speed.

    Returns None when the resonance inequality fails (no positive E_{k,l}).
    """
    if k == l:
        raise ValueError("resonance needs two distinct modes")
    if p.gamma == 0:
        raise VorticityRequiredError("E_{k,l} divides by gamma**2")
    lhs, rhs = resonance_condition(k, l, p)
    if not lhs > rhs:
        return None
    tk_, tl = tk(k), tk(l)
    return (lhs - rhs) / ((tk_ - tl) ** 2 * p.gamma**2 * p.eps0)


def trivial_constants(lam: float, p: WaveParams) -> TrivialState:
    return TrivialState(lam=lam, m=0.5 * p.gamma - lam, q=lam * lam - p.field_energy)


def sweep_resonant_vorticity(k: int, l: int, p: WaveParams, step: float = 0.25,
                             gamma_max: float = 100.0) -> float:
    """Smallest gamma on the grid ``step, 2*step, ...`` where E_{k,l} exists."""
    n = 1
    while n * step <= gamma_max:
        q = p.with_(gamma=n * step)
        if resonance_field(k, l, q) is not None:
            return n * step
        n += 1
    raise ValueError(f"no resonant vorticity for ({k},{l}) below {gamma_max}")
