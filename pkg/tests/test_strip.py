import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehdwaves.params import WaveParams
from ehdwaves.strip import (
    LOWER,
    UPPER,
    SingularSystemError,
    StripGrid,
    StripSolve,
    SurfaceProfile,
    UnresolvedProfileError,
    cheb,
    green_solve,
    h_trace,
    h_trace_exponential,
    interface_traces,
    mode_solve_h,
    mode_solve_w,
    solve_stream,
    solve_voltage,
    w_trace,
    w_trace_exponential,
)

# 1 - coth(1), from mpmath at 30 digits
ONE_MINUS_COTH1 = -0.313035285499331303636161246931


def test_cheb_differentiates_polynomials_exactly():
    x, d = cheb(9)
    assert np.allclose(d @ x**5, 5 * x**4, atol=1e-12)
    assert np.allclose(d @ np.ones_like(x), 0, atol=1e-12)
    with pytest.raises(ValueError):
        cheb(1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.1, 0.1), min_size=1, max_size=7))
def test_profile_analysis_roundtrip(coeffs):
    g = StripGrid(16, 8, LOWER)
    eta = SurfaceProfile(coeffs)
    c = g.cosine_coefficients(g.eval_profile(eta)[0])
    assert np.allclose(c[1 : eta.nmodes + 1], eta.coeffs, atol=1e-13)
    assert abs(c[0]) <= 1e-13


def test_projection_normalization():
    g = StripGrid(32, 8, LOWER)
    assert g.projection(np.cos(3 * g.q), 3) == pytest.approx(1.0, abs=1e-14)
    assert g.projection(np.cos(3 * g.q), 2) == pytest.approx(0.0, abs=1e-14)


def test_profile_algebra_and_norms():
    a = SurfaceProfile.mode(2, 0.3, 4)
    b = SurfaceProfile.mode(1, -0.1)
    s = a + b
    assert s.nmodes == 4 and s.max_mode == 2
    assert np.allclose((2 * s).coeffs, [-0.2, 0.6, 0, 0])
    assert (-s).coeffs[1] == -0.3
    assert SurfaceProfile.zeros(3).max_mode == 0
    assert a.sup_norm() == pytest.approx(0.3)
    with pytest.raises(ValueError):
        a.padded(1)
    with pytest.raises(ValueError):
        SurfaceProfile([math.nan])


def test_unresolved_profile_rejected():
    with pytest.raises(UnresolvedProfileError):
        StripGrid(16, 8, LOWER).check_profile(SurfaceProfile.mode(9))


def test_degenerate_domain_rejected():
    with pytest.raises(SingularSystemError):
        StripSolve(StripGrid(16, 8, LOWER), SurfaceProfile.mode(1, 1.2))


def test_flat_fields_are_exact():
    p = WaveParams(gamma=0.6, e0=0.7)
    lam = 1.1
    eta = SurfaceProfile.zeros(4)
    psi = solve_stream(eta, lam, p, StripGrid(16, 10, LOWER))
    pp = psi.grid.p
    assert np.allclose(psi.values, 0.5 * p.gamma * pp**2 + lam * pp, atol=1e-12)
    tr = interface_traces(psi)
    assert np.allclose(tr.fp, lam, atol=1e-12) and np.allclose(tr.fq, 0, atol=1e-12)
    v = solve_voltage(eta, p.e0, p, StripGrid(16, 10, UPPER))
    assert np.allclose(v.values, p.e0 * v.grid.p, atol=1e-12)


def test_wrong_side_rejected():
    with pytest.raises(ValueError):
        solve_stream(SurfaceProfile.zeros(2), 1.0, WaveParams(), StripGrid(16, 8, UPPER))


def test_field_is_spectrally_converged():
    p = WaveParams(gamma=0.4)
    eta = SurfaceProfile([0.05, 0.02])
    coarse = interface_traces(solve_stream(eta, 1.0, p, StripGrid(16, 16, LOWER))).fp
    fine = interface_traces(solve_stream(eta, 1.0, p, StripGrid(16, 32, LOWER))).fp
    assert np.max(np.abs(coarse - fine)) <= 1e-8
    # stream field is even in q
    assert solve_stream(eta, 1.0, p, StripGrid(16, 16, LOWER)).odd_fraction() <= 1e-14


def test_eta_sensitivity_matches_finite_difference():
    g = StripGrid(16, 12, LOWER)
    p = WaveParams(gamma=0.4)
    eta = SurfaceProfile([0.05, 0.02, 0.0])
    d = SurfaceProfile.mode(2, 1.0, 3)
    sol = StripSolve(g, eta)
    u = solve_stream(eta, 1.0, p, g, sol).values
    sens = sol.eta_sensitivity(u, [g.eval_profile(d)])[0]
    h = 1e-6
    up = solve_stream(eta + h * d, 1.0, p, g).values
    um = solve_stream(eta + (-h) * d, 1.0, p, g).values
    assert np.max(np.abs(sens - (up - um) / (2 * h))) <= 1e-7


def test_green_solve_against_exact_solution():
    k = 3.0
    p_out = np.linspace(-1, 0, 11)
    u = green_solve(3, lambda r: np.ones_like(r), LOWER, p_out)
    # u'' - k^2 u = 1, u(-1) = u(0) = 0
    exact = (np.cosh(k * (p_out + 0.5)) / np.cosh(k / 2) - 1) / k**2
    assert np.max(np.abs(u - exact)) <= 1e-14


def test_trace_frozen_values():
    assert w_trace(1, 1.0, 0.0) == pytest.approx(ONE_MINUS_COTH1, rel=1e-14)
    assert h_trace(1, 1.0) == pytest.approx(-ONE_MINUS_COTH1, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.floats(-3, 3), st.floats(-2, 2), st.floats(0.05, 2))
def test_trace_forms_agree(k, lam, gamma, e0):
    w = w_trace(k, lam, gamma)
    assert w_trace_exponential(k, lam, gamma) == pytest.approx(w, rel=1e-10, abs=1e-12)
    assert h_trace_exponential(k, e0) == pytest.approx(h_trace(k, e0), rel=1e-10)


def test_mode_solutions_vanish_at_ends_and_match_traces():
    p = WaveParams(gamma=0.5)
    w = mode_solve_w(2, 1.2, p)
    h = mode_solve_h(2, 0.8)
    assert abs(w.values[0]) <= 1e-14 and abs(w.values[-1]) <= 1e-14
    assert abs(h.values[0]) <= 1e-14 and abs(h.values[-1]) <= 1e-14
    assert w.trace_quadrature == pytest.approx(w.trace, rel=1e-12)
    assert h.trace_quadrature == pytest.approx(h.trace, rel=1e-12)
    with pytest.raises(ValueError):
        mode_solve_w(1, 1.0, p, ngrid=4)
