import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehdwaves.bifurcation import (
    BifurcationPoint,
    ContinuationOptions,
    DegenerateResonanceError,
    InadmissibleFieldError,
    KernelDimensionError,
    Sign,
    bifurcation_point,
    branch_direction,
    continue_branch,
    find_bifurcation_points,
    newton,
    nondegeneracy_checks,
    pitchfork_fit,
    point_at_amplitude,
    reduced_direction,
    symmetric_modes,
    tracked_eigenpair,
)
from ehdwaves.params import WaveParams, bifurcation_speeds, resonance_field, tk
from ehdwaves.residual import ResidualModel, d_lambda_eta

P = WaveParams(g=1.0, sigma=1.0, gamma=0.0, eps0=1.0, e0=0.5)


@pytest.fixture(scope="module")
def model():
    return ResidualModel(P, 32, 24, nmodes=8)


@pytest.fixture(scope="module")
def branch(model):
    bp = bifurcation_point(1, Sign.PLUS, P)
    return bp, continue_branch(bp, model, ContinuationOptions(smax=6e-3, ds0=2e-3, max_step=2e-3))


def test_points_are_simple_and_match_roots(model):
    pts = find_bifurcation_points(P, 3, model)
    assert len(pts) == 6
    for bp in pts:
        assert bp.kernel_dim == 1 and bp.partner_mode is None
        roots = bifurcation_speeds(bp.k, P)
        assert bp.lambda_star == roots[0 if bp.sign is Sign.PLUS else 1]
    assert pts[0].label == "k1+"


def test_inadmissible_field_raises():
    with pytest.raises(InadmissibleFieldError):
        find_bifurcation_points(P.with_(e0=1.3), 2, validate=False)
    with pytest.raises(InadmissibleFieldError):
        bifurcation_point(1, "plus", P.with_(e0=1.3))


def test_resonant_point_has_two_dimensional_kernel():
    base = WaveParams(gamma=1.75)
    q = base.with_field_squared(resonance_field(2, 1, base))
    pts = find_bifurcation_points(q, 2, ResidualModel(q, 32, 24, nmodes=8))
    shared = [b for b in pts if b.sign is Sign.PLUS]
    assert all(b.kernel_dim == 2 for b in shared)
    assert {b.partner_mode for b in shared} == {1, 2}
    with pytest.raises(KernelDimensionError):
        continue_branch(shared[0], ResidualModel(q, 32, 24, nmodes=8))


def test_newton_at_flat_state(model):
    u0 = model.trivial(1.0).vector()
    u0[0] = 1e-3  # perturbed start; fixed lam away from lam* has only the flat solution nearby
    res = newton(model, u0, None, fixed=[model.nmodes + 1])
    assert res.residual_norm <= 1e-10
    assert np.max(np.abs(res.u[: model.nmodes])) <= 1e-10


def test_symmetric_modes():
    assert symmetric_modes(2, 8) == [2, 4, 6, 8]
    assert symmetric_modes(3, 8) == [3, 6]


def test_tracked_eigenpair_picks_mode():
    block = np.diag([3.0, -1.0, 2.0])
    mu, vec, _ = tracked_eigenpair(block, 2)
    assert mu == -1.0 and abs(vec[1]) == pytest.approx(1.0)


def test_smax_zero_gives_single_origin_row(model):
    bp = bifurcation_point(1, "plus", P)
    br = continue_branch(bp, model, ContinuationOptions(smax=0.0))
    assert len(br.points) == 1 and br.points[0].s == 0.0
    assert br.points[0].lam == pytest.approx(bp.lambda_star, abs=1e-12)


def test_branch_is_ordered_converged_and_even(branch):
    bp, br = branch
    assert br.status == "ok"
    assert np.all(np.diff(br.s) > 0)
    assert br.s[0] == pytest.approx(-6e-3) and br.s[-1] == pytest.approx(6e-3)
    assert max(pt.residual_norm for pt in br.points) <= 1e-10
    # pitchfork: lam(s) = lam(-s)
    assert np.allclose(br.lam, br.lam[::-1], atol=1e-11)


def test_symmetric_continuation_keeps_other_modes_zero(model):
    br = continue_branch(bifurcation_point(2, "plus", P), model,
                         ContinuationOptions(smax=2e-3, ds0=2e-3, direction=1))
    coeffs = br.coefficients()
    assert len(br.points) == 2 and br.status == "ok"
    assert np.all(coeffs[:, 0::2] == 0.0)  # modes 1, 3, 5, 7


def test_pitchfork_fit_and_reduction_agree(branch, model):
    bp, br = branch
    fit = pitchfork_fit(br.s, br.lam, bp.lambda_star)
    red = reduced_direction(bp, model)
    assert abs(fit["lambda_prime"]) <= 1e-6
    assert fit["lambda_pp"] < 0
    assert fit["lambda_pp"] == pytest.approx(red["lambda_pp"], rel=1e-4)
    assert red["d_lambda_eta"] == pytest.approx(d_lambda_eta(1, bp.lambda_star, P), rel=1e-6)


def test_closed_form_direction_signs():
    for k in (1, 2, 3):
        lp, lpp = branch_direction(bifurcation_point(k, "plus", P), P)
        assert abs(lp) <= 1e-12 and lpp < 0
        lp, lpp = branch_direction(bifurcation_point(k, "minus", P), P)
        assert abs(lp) <= 1e-12 and lpp > 0
    with pytest.raises(KernelDimensionError):
        branch_direction(BifurcationPoint(1, Sign.PLUS, 1.0, kernel_dim=2), P)


@settings(max_examples=40, deadline=None)
@given(st.floats(-2, 2), st.floats(-5, 5), st.floats(-50, 50))
def test_pitchfork_fit_recovers_polynomial(a1, a2, a4):
    s = np.linspace(-0.01, 0.01, 9)
    lam = 1.0 + a1 * s + 0.5 * a2 * s**2 + a4 * s**4
    fit = pitchfork_fit(s, lam, 1.0)
    assert fit["lambda_prime"] == pytest.approx(a1, abs=1e-8)
    assert fit["lambda_pp"] == pytest.approx(a2, abs=1e-5)


def test_pitchfork_fit_needs_points():
    with pytest.raises(ValueError):
        pitchfork_fit([0.0, 0.1], [1.0, 1.0], 1.0)


def test_point_at_amplitude_needs_guess(model):
    with pytest.raises(ValueError):
        point_at_amplitude(model, 1, 1e-3)


def test_nondegeneracy_first_determinant_closed_form():
    base = WaveParams(gamma=1.75)
    rec = nondegeneracy_checks(2, 1, base)
    e0 = np.sqrt(rec.e_field)
    t2, t1 = tk(2), tk(1)
    assert rec.determinant1 == pytest.approx(8 * 1.75 * e0 * (t1 - t2) / (t1 * t2), rel=1e-12)
    assert rec.sign is Sign.PLUS and rec.certified
    assert rec.determinant2 != 0.0


def test_nondegeneracy_fails_without_two_to_one_ratio():
    base = WaveParams(gamma=2.0)
    with pytest.raises(DegenerateResonanceError):
        nondegeneracy_checks(1, 2, base)
    rec = nondegeneracy_checks(1, 2, base, strict=False)
    assert not rec.certified
    with pytest.raises(DegenerateResonanceError):
        nondegeneracy_checks(2, 1, WaveParams(gamma=0.5))
