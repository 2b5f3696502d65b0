"""Independent reference computations used only by the tests."""

import numpy as np
from scipy.linalg import solve_banded

from ehdwaves.residual import ExtendedState
from ehdwaves.strip import SurfaceProfile


def numerov_dirichlet(k, forcing, a, b, n):
    """Numerov solve of u'' - k^2 u = f on [a, b], u(a) = u(b) = 0, n intervals."""
    x = np.linspace(a, b, n + 1)
    h = (b - a) / n
    f = forcing(x)
    c = h * h * k * k / 12.0
    m = n - 1
    ab = np.zeros((3, m))
    ab[0, 1:] = 1.0 - c
    ab[1, :] = -2.0 * (1.0 + 5.0 * c)
    ab[2, :-1] = 1.0 - c
    rhs = h * h / 12.0 * (f[2:] + 10.0 * f[1:-1] + f[:-2])
    u = np.zeros(n + 1)
    u[1:-1] = solve_banded((1, 1), ab, rhs)
    return x, u


def numerov_richardson(k, forcing, a, b, n):
    """Sixth-order values on the n-interval grid from Numerov at n and 2n intervals."""
    x, u1 = numerov_dirichlet(k, forcing, a, b, n)
    _, u2 = numerov_dirichlet(k, forcing, a, b, 2 * n)
    return x, (16.0 * u2[::2] - u1) / 15.0


def fd_directional(model, state, k, order, h=2e-3):
    """Richardson-extrapolated central difference of the residual nodes along cos(kq)."""
    u0 = state.vector()
    e = np.zeros_like(u0)
    e[k - 1] = 1.0

    def f(t):
        return model.residual(ExtendedState.from_vector(u0 + t * e)).nodes

    def d(hh):
        if order == 2:
            return (f(hh) - 2.0 * f(0.0) + f(-hh)) / hh**2
        return (f(2 * hh) - 2.0 * f(hh) + 2.0 * f(-hh) - f(-2 * hh)) / (2.0 * hh**3)

    return (4.0 * d(h / 2) - d(h)) / 3.0


def mode_profile(k, nmodes):
    return SurfaceProfile.mode(k, 1.0, nmodes)
