"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import fd_directional, numerov_richardson

from ehdwaves.bifurcation import (
    ContinuationOptions,
    Sign,
    bifurcation_point,
    branch_direction,
    continue_branch,
    detect_singularities,
    find_bifurcation_points,
    nondegeneracy_checks,
    pitchfork_fit,
    point_at_amplitude,
    switch_branch,
    uniqueness_probe,
)
from ehdwaves.params import (
    WaveParams,
    admissible_field,
    bifurcation_speeds,
    dispersion,
    resonance_field,
    sweep_resonant_vorticity,
    tk,
)
from ehdwaves.residual import (
    FlatPoint,
    ResidualModel,
    second_derivative,
    second_derivative_projection,
    third_derivative,
    third_derivative_projection,
)
from ehdwaves.stability import (
    Stability,
    branch_eigenvalue,
    classify_branch,
    classify_trivial,
    exchange_ratio,
)
from ehdwaves.strip import SurfaceProfile, mode_solve_h, mode_solve_w

pytestmark = pytest.mark.acceptance

BASE = WaveParams(g=1.0, sigma=1.0, gamma=0.0, eps0=1.0, e0=0.5)


def record(n, passed, detail, t0):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} ({time.perf_counter() - t0:.1f} s) {detail}"
    ACCEPTANCE_LINES.append(line)
    assert passed, line


def test_criterion_01_dispersion_roots():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst, count = 0.0, 0
    while count < 200:
        k = int(rng.integers(1, 9))
        g, sigma, gamma, eps0 = rng.uniform(0.1, 5), rng.uniform(0, 3), rng.uniform(-3, 3), rng.uniform(0.1, 3)
        cap = min((g + sigma * j * j) * tk(j) for j in range(1, 9)) / eps0
        p = WaveParams(g, sigma, gamma, eps0, np.sqrt(rng.uniform(0, 0.99) * cap))
        if not admissible_field(p, 8):
            continue
        t = tk(k)
        for lam in bifurcation_speeds(k, p):
            scale = (2 / t) * max(lam * lam, abs(gamma * t * lam), p.field_energy, (g + sigma * k * k) * t)
            worst = max(worst, abs(dispersion(k, lam, p)) / scale)
        count += 1
    elapsed = time.perf_counter() - t0
    record(1, worst <= 1e-12 and elapsed < 1.0, f"max |D_k|/scale = {worst:.2e} over 200 tuples", t0)


def test_criterion_02_green_vs_fd():
    t0 = time.perf_counter()
    worst = 0.0
    p = WaveParams(g=1.0, sigma=1.0, gamma=0.7, eps0=1.0, e0=0.8)
    lam = 1.3
    for k in (1, 2, 4, 8):
        w = mode_solve_w(k, lam, p)
        h = mode_solve_h(k, p.e0)
        n = 63 * 32  # output nodes linspace(., ., 64) lie on the FD grid
        _, uw = numerov_richardson(k, lambda r: 2 * p.gamma - (1 + r) * (p.gamma * r + lam) * k * k, -1.0, 0.0, n)
        _, uh = numerov_richardson(k, lambda r: p.e0 * (r - 1) * k * k, 0.0, 1.0, n)
        worst = max(worst, np.max(np.abs(w.values - uw[::32])), np.max(np.abs(h.values - uh[::32])))
    elapsed = time.perf_counter() - t0
    record(2, worst <= 1e-8 and elapsed < 10, f"max |G-quadrature - FD| = {worst:.2e}", t0)


def test_criterion_03_trace_closed_forms():
    t0 = time.perf_counter()
    worst = 0.0
    for gamma, lam, e0 in ((0.0, 1.2, 0.5), (0.8, -0.9, 1.1), (-1.5, 2.3, 0.2)):
        p = WaveParams(gamma=gamma, e0=e0)
        for k in range(1, 9):
            for sol in (mode_solve_w(k, lam, p), mode_solve_h(k, e0)):
                ref = sol.trace
                for other in (sol.trace_quadrature, sol.extras["exponential"]):
                    worst = max(worst, abs(other - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    record(3, worst <= 1e-10 and elapsed < 5, f"max relative trace mismatch = {worst:.2e}", t0)


def _eta_block_error(N, lam):
    m = ResidualModel(BASE, 64, N)
    block = m.jacobian(m.trivial(lam)).eta_block
    d = np.array([dispersion(k, lam, BASE) for k in range(1, m.nmodes + 1)])
    off = block - np.diag(np.diag(block))
    diag_err = np.max(np.abs(np.diag(block) - d) / np.abs(d))
    return max(diag_err, np.max(np.abs(off)) / np.max(np.abs(d)))


def test_criterion_04_fourier_multiplier():
    t0 = time.perf_counter()
    lam = 0.7  # no D_k vanishes here, so relative errors are meaningful
    e48 = _eta_block_error(48, lam)
    e96 = _eta_block_error(96, lam)
    ok = e48 <= 1e-4 and e96 <= 1e-6 and time.perf_counter() - t0 < 120
    record(4, ok, f"relative error N=48: {e48:.2e}, N=96: {e96:.2e}", t0)


def test_criterion_05_analytic_vs_fd_derivatives():
    t0 = time.perf_counter()
    p = BASE.with_(e0=0.0)
    m = ResidualModel(p)
    err2 = err3 = proj = 0.0
    signs = []
    for k in (1, 2, 3):
        lam = bifurcation_speeds(k, p)[0]
        at = FlatPoint(lam, p)
        st = m.trivial(lam)
        x = SurfaceProfile.mode(k)
        fd2 = fd_directional(m, st, k, 2)
        fd3 = fd_directional(m, st, k, 3)
        an2 = second_derivative(x, x, at, grid=m.grid).nodes
        an3 = third_derivative(x, at, grid=m.grid).nodes
        err2 = max(err2, np.max(np.abs(an2 - fd2)) / np.max(np.abs(fd2)))
        err3 = max(err3, np.max(np.abs(an3 - fd3)) / np.max(np.abs(fd3)))
        proj = max(proj, abs(second_derivative_projection(k, at)))
        signs.append(third_derivative_projection(k, at) < 0)
    ok = err2 <= 1e-5 and err3 <= 1e-4 and proj <= 1e-8 and all(signs)
    detail = (f"F2 rel err {err2:.2e} (tol 1e-5), F3 rel err {err3:.2e} (tol 1e-4), "
              f"|<l,F2>| {proj:.1e}, F3 projection negative for k=1,2,3: {all(signs)}")
    record(5, ok and time.perf_counter() - t0 < 120, detail, t0)


def test_criterion_06_pitchfork_diagnostics():
    t0 = time.perf_counter()
    model = ResidualModel(BASE)
    smax = 0.01
    opts = ContinuationOptions(smax=smax, ds0=2e-3, max_step=2e-3)
    slope_ok, sign_ok, agree, worst_time = True, True, [], 0.0
    parts = []
    for k in (1, 2, 3):
        for sign in (Sign.PLUS, Sign.MINUS):
            t1 = time.perf_counter()
            bp = bifurcation_point(k, sign, BASE)
            br = continue_branch(bp, model, opts)
            fit = pitchfork_fit(br.s, br.lam, bp.lambda_star)
            formula = branch_direction(bp, BASE)[1]
            slope_ok &= br.status == "ok" and abs(fit["lambda_prime"]) <= 1e-3 * abs(fit["lambda_pp"]) * smax
            sign_ok &= (fit["lambda_pp"] < 0) if sign is Sign.PLUS else (fit["lambda_pp"] > 0)
            rel = abs(fit["lambda_pp"] - formula) / abs(formula)
            agree.append(rel)
            parts.append(f"{bp.label}: fit {fit['lambda_pp']:.4f} vs formula {formula:.4f}")
            worst_time = max(worst_time, time.perf_counter() - t1)
    ok = slope_ok and sign_ok and max(agree) <= 0.05 and worst_time < 300
    detail = (f"slope ok: {slope_ok}, signs ok: {sign_ok}, max |fit/formula - 1| = {max(agree):.3f} "
              f"(tol 0.05); " + "; ".join(parts))
    record(6, ok, detail, t0)


def test_criterion_07_branch_asymptotics():
    t0 = time.perf_counter()
    model = ResidualModel(BASE)
    ratios = {}
    for k in (1, 2):
        bp = bifurcation_point(k, Sign.PLUS, BASE)
        guess = model.trivial(bp.lambda_star)
        for s in (1e-3, 2e-3, 4e-3):
            pt = point_at_amplitude(model, k, s, guess)
            guess = pt.state
            dev = pt.state.eta + SurfaceProfile.mode(k, -s, model.nmodes)
            ratios[(k, s)] = dev.sup_norm() / s**2
    consistent = all(
        abs(ratios[(k, 2e-3)] / ratios[(k, 1e-3)] - 1) <= 0.1
        and abs(ratios[(k, 4e-3)] / ratios[(k, 2e-3)] - 1) <= 0.1 for k in (1, 2))
    finite = all(np.isfinite(v) for v in ratios.values())
    detail = ", ".join(f"C(k={k}, s={s:g}) = {v:.4f}" for (k, s), v in ratios.items())
    record(7, finite and consistent and time.perf_counter() - t0 < 180, detail, t0)


def test_criterion_08_exchange_of_stability():
    t0 = time.perf_counter()
    pattern_ok, mu_ok, ratio_ok = True, True, True
    worst_ratio = 0.0
    for gamma in (-0.05, 0.0, 0.05):
        p = BASE.with_(gamma=gamma)
        model = ResidualModel(p)
        for k, sign in ((1, Sign.PLUS), (1, Sign.MINUS)):
            bp = bifurcation_point(k, sign, p)
            offs = 0.05 * np.arange(1, 11) / 10
            below = classify_trivial(bp.lambda_star - offs, bp, p)
            above = classify_trivial(bp.lambda_star + offs, bp, p)
            want_above = Stability.FORMALLY_STABLE if sign is Sign.PLUS else Stability.UNSTABLE
            want_below = Stability.UNSTABLE if sign is Sign.PLUS else Stability.FORMALLY_STABLE
            pattern_ok &= all(v.label is want_above for v in above.values())
            pattern_ok &= all(v.label is want_below for v in below.values())
            br = continue_branch(bp, model, ContinuationOptions(smax=1e-2, ds0=2e-3, max_step=2e-3))
            classify_branch(br)
            mu_ok &= br.status == "ok" and all(pt.tracked_eigenvalue < 0 for pt in br.points if pt.s != 0)
            for s, r, target in exchange_ratio(bp, model, [2e-3, 5e-3, 1e-2]):
                worst_ratio = max(worst_ratio, abs(r / target - 1))
    ratio_ok = worst_ratio <= 0.1
    ok = pattern_ok and mu_ok and ratio_ok and time.perf_counter() - t0 < 600
    detail = f"trivial pattern: {pattern_ok}, mu(s) < 0: {mu_ok}, max |ratio/target - 1| = {worst_ratio:.2e}"
    record(8, ok, detail, t0)


def test_criterion_09_resonance_certification():
    t0 = time.perf_counter()
    base = WaveParams(g=1.0, sigma=1.0, gamma=0.0, eps0=1.0, e0=0.0)
    gamma = sweep_resonant_vorticity(2, 1, base)
    pg = base.with_(gamma=gamma)
    e21 = resonance_field(2, 1, pg)
    q = pg.with_field_squared(e21)
    shared = abs(bifurcation_speeds(2, q)[0] - bifurcation_speeds(1, q)[0])
    pts = find_bifurcation_points(q, 3, ResidualModel(q))
    bp = next(b for b in pts if b.k == 2 and b.sign is Sign.PLUS)
    m = ResidualModel(q)
    sv = np.sort(np.linalg.svd(m.jacobian(m.trivial(bp.lambda_star)).eta_block, compute_uv=False))
    scale = float(np.median(sv))
    kernel_ok = sv[0] < 1e-6 * scale and sv[1] < 1e-6 * scale and sv[2] > 1e-2 * scale
    rec = nondegeneracy_checks(2, 1, pg)
    det_rel = abs(rec.determinant1 - rec.determinant1_closed) / abs(rec.determinant1_closed)
    ok = e21 > 0 and shared <= 1e-10 and kernel_ok and bp.kernel_dim == 2 and det_rel <= 1e-8
    detail = (f"gamma={gamma}, E21={e21:.10g}, |lam2+ - lam1+|={shared:.1e}, "
              f"sv/scale={sv[0] / scale:.1e},{sv[1] / scale:.1e},{sv[2] / scale:.2f}, det rel err={det_rel:.1e}")
    record(9, ok and time.perf_counter() - t0 < 300, detail, t0)


def test_criterion_10_secondary_bifurcation():
    t0 = time.perf_counter()
    base = WaveParams(g=1.0, sigma=1.0, gamma=0.0, eps0=1.0, e0=0.0)
    pg = base.with_(gamma=sweep_resonant_vorticity(2, 1, base))
    rec = nondegeneracy_checks(2, 1, pg)
    model = ResidualModel(pg)
    found, switched = [], None
    opts = ContinuationOptions(smax=1e-2, max_step=2e-3)
    for delta in (1e-2, 1e-3, -1e-2, -1e-3):
        q = pg.with_field_squared(rec.e_field * (1 + delta))
        m = model.with_params(q)
        br = continue_branch(bifurcation_point(2, rec.sign, q), m, opts)
        events = [e for e in detect_singularities(br, m) if e.mode == 1]
        if events:
            found.append((delta, events[0].s))
            if switched is None:
                switched = switch_branch(events[0], m, opts)
    good = []
    if switched is not None:
        good = [pt for pt in switched.points
                if pt.residual_norm <= 1e-9 and abs(pt.state.eta.coeffs[0]) >= 1e-4]
    ok = bool(found) and len(good) >= 5 and time.perf_counter() - t0 < 900
    detail = (f"events (delta, s): {[(d, round(s, 6)) for d, s in found]}, "
              f"{len(good)} mixed-mode points with residual <= 1e-9 and |eta_1| >= 1e-4")
    record(10, ok, detail, t0)


def test_criterion_11_uniqueness_probe():
    t0 = time.perf_counter()
    model = ResidualModel(BASE)
    bp = bifurcation_point(1, Sign.PLUS, BASE)
    out = uniqueness_probe(bp, model, n=50, seed=7)
    fams = {f: sum(o.family == f for o in out) for f in ("trivial", "branch", "other", "unconverged")}
    ok = fams["other"] == 0 and fams["unconverged"] == 0 and time.perf_counter() - t0 < 600
    record(11, ok, f"outcomes {fams}", t0)
