"""Command-line front end.

Every subcommand reads one config file and writes a dataset directory
``<out>/<command>-<key>`` where ``key`` is a hash of the config.  Exit codes:
0 success, 3 config error, 4 numerical failure, 5 no event found, 6 I/O error.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bifurcation import (
    Branch,
    ContinuationOptions,
    DegenerateResonanceError,
    InadmissibleFieldError,
    KernelDimensionError,
    NewtonFailure,
    StepFailure,
    SwitchFailedError,
    TransversalityError,
    bifurcation_point,
    branch_direction,
    continue_branch,
    detect_singularities,
    find_bifurcation_points,
    nondegeneracy_checks,
    pitchfork_fit,
    reduced_direction,
    switch_branch,
)
from .io import (
    BranchDataset,
    ConfigError,
    RunConfig,
    load_config,
    read_csv,
    timestamp,
    validate_config,
    write_csv,
    write_json,
)
from .params import (
    DegenerateRootError,
    VorticityRequiredError,
    admissible_field,
    bifurcation_speeds,
    dispersion,
    resonance_field,
    sweep_resonant_vorticity,
)
from .residual import ExtendedState, ResidualModel, d_lambda_eta
from .stability import classify_branch, classify_trivial, exchange_ratio
from .strip import SingularSystemError, SurfaceProfile

__all__ = [
    "main",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
    "EXIT_NO_EVENT",
    "EXIT_IO",
    "JOBS_ENV",
    "CommandResult",
    "cmd_dispersion",
    "cmd_points",
    "cmd_branch",
    "cmd_stability",
    "cmd_resonance_atlas",
    "cmd_secondary",
    "cmd_sweep",
    "load_branch_dataset",
]

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4
EXIT_NO_EVENT = 5
EXIT_IO = 6

JOBS_ENV = "EHDWAVES_JOBS"
DEFAULT_OUT = "ehdwaves-out"

NUMERICAL_ERRORS = (NewtonFailure, StepFailure, SingularSystemError, TransversalityError,
                    DegenerateRootError, DegenerateResonanceError, KernelDimensionError,
                    SwitchFailedError, ArithmeticError, np.linalg.LinAlgError)


class CommandResult:
    """Outcome of one subcommand: exit code, dataset directory and a short message."""

    def __init__(self, code: int, directory: Path, message: str = ""):
        self.code = code
        self.directory = Path(directory)
        self.message = message

    def __repr__(self):
        return f"CommandResult({self.code}, {str(self.directory)!r}, {self.message!r})"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _dataset_dir(cfg: RunConfig, out, command: str) -> Path:
    d = Path(out) / f"{command}-{cfg.dataset_key}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _meta(cfg: RunConfig, command: str, **extra) -> dict:
    meta = {"command": command, "version": __version__, "config_hash": cfg.config_hash,
            "created": timestamp(), "config": cfg.canonical()}
    meta.update(extra)
    return meta


def _model(cfg: RunConfig, params=None) -> ResidualModel:
    return ResidualModel(params or cfg.params, cfg.M, cfg.N, cfg.nmodes)


def _options(cfg: RunConfig, *, smax=None, direction=None) -> ContinuationOptions:
    num = cfg.section("numerics")
    smax = num["smax"] if smax is None else smax
    ds0 = min(num["ds0"], smax) if smax > 0 else num["ds0"]
    return ContinuationOptions(tol=num["newton_tol"], ds0=ds0, max_step=max(num["max_step"], ds0),
                               smax=smax,
                               direction=cfg["branch", "direction"] if direction is None else direction)


def _state_of(row, nmodes) -> ExtendedState:
    eta = SurfaceProfile(np.array(row[6:6 + nmodes], dtype=float))
    return ExtendedState(eta, float(row[1]), float(row[2]))


def load_branch_dataset(directory, stem: str = "branch") -> BranchDataset:
    """Reload a dataset written by ``branch``, ``secondary`` or ``sweep``."""
    return BranchDataset.read(directory, stem)


def _summary(bp, ds: BranchDataset, cfg: RunConfig, model=None, *, reduced=True) -> dict:
    s, lam = ds.column("s"), ds.column("lambda")
    out = {"k": bp.k, "sign": bp.sign.value, "lambda_star": bp.lambda_star,
           "beta_prime": d_lambda_eta(bp.k, bp.lambda_star, cfg.params), "points": len(ds.rows)}
    lp, lpp = branch_direction(bp, cfg.params)
    out["lambda_prime_closed"] = lp
    out["lambda_pp_closed"] = lpp
    if reduced:
        out["lambda_pp_reduced"] = reduced_direction(bp, model or _model(cfg))["lambda_pp"]
    if len(ds.rows) >= 3 and np.ptp(s) > 0:
        fit = pitchfork_fit(s, lam, bp.lambda_star)
        out["lambda_prime_fit"] = fit["lambda_prime"]
        out["lambda_pp_fit"] = fit["lambda_pp"]
        out["fit"] = fit
    else:
        out["lambda_prime_fit"] = None
        out["lambda_pp_fit"] = None
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_dispersion(cfg: RunConfig, out, *, resume: bool = False) -> CommandResult:
    """Table of (k, lambda, D_k) plus the real roots of each D_k."""
    d = _dataset_dir(cfg, out, "dispersion")
    sec = cfg.section("dispersion")
    p = cfg.params
    ks = sec["k_values"]
    lams = np.linspace(sec["lambda_min"], sec["lambda_max"], sec["lambda_points"])
    rows, roots, warnings = [], [], list(cfg.warnings)
    for k in ks:
        rows.extend((k, lam, dispersion(k, lam, p)) for lam in lams)
        try:
            r = bifurcation_speeds(k, p)
        except DegenerateRootError as exc:
            warnings.append(str(exc))
            continue
        if r is None:
            warnings.append(f"mode {k}: no real bifurcation speed")
            continue
        roots.extend({"k": k, "sign": sg, "lambda": v} for sg, v in zip(("plus", "minus"), r))
    if ks:
        ok, bad = admissible_field(p, max(ks), return_mode=True)
        if not ok:
            warnings.append("inadmissible field: (g + sigma k^2) T_k > eps0 E0^2 fails"
                            + (f" at k = {bad}" if bad else " for large k"))
    write_csv(d / "dispersion.csv", ["k", "lambda", "D_k"], rows)
    write_json(d / "dispersion.json", _meta(cfg, "dispersion", roots=roots, warnings=warnings))
    return CommandResult(EXIT_OK, d, f"{len(rows)} rows, {len(roots)} roots")


def cmd_points(cfg: RunConfig, out, *, resume: bool = False) -> CommandResult:
    """Bifurcation points up to kmax with the discrete kernel dimension."""
    d = _dataset_dir(cfg, out, "points")
    kmax = cfg["numerics", "kmax"]
    if kmax > cfg.nmodes:
        raise ConfigError([f"[numerics] kmax = {kmax} exceeds the {cfg.nmodes} retained modes"])
    pts = find_bifurcation_points(cfg.params, kmax, _model(cfg))
    rows = []
    for bp in pts:
        sv = list(bp.singular_values) + [float("nan")] * 3
        rows.append((bp.k, bp.sign.value, bp.lambda_star, bp.kernel_dim,
                     bp.partner_mode if bp.partner_mode else "",
                     d_lambda_eta(bp.k, bp.lambda_star, cfg.params), *sv[:3]))
    write_csv(d / "points.csv", ["k", "sign", "lambda_star", "kernel_dim", "partner_mode",
                                 "beta_prime", "sv1", "sv2", "sv3"], rows)
    write_json(d / "points.json", _meta(cfg, "points", count=len(rows), warnings=cfg.warnings))
    return CommandResult(EXIT_OK, d, f"{len(rows)} bifurcation points")


def _run_branch(cfg: RunConfig, d: Path, bp, *, resume: bool, stem: str = "branch",
                reduced: bool = True) -> tuple[BranchDataset, dict]:
    model = _model(cfg)
    opts = _options(cfg)
    old = None
    if resume and (d / f"{stem}.csv").exists():
        old = BranchDataset.read(d, stem)
        if old.meta.get("dataset_key") != cfg.dataset_key or old.nmodes != cfg.nmodes:
            old = None
    if old is not None and old.rows:
        s_old = old.column("s")
        start, dirs = {}, (1, -1) if opts.direction == 0 else (opts.direction,)
        for dr in dirs:
            j = int(np.argmax(s_old * dr))
            if dr * s_old[j] < opts.smax - 1e-15:
                start[dr] = _state_of(old.rows[j], old.nmodes)
        if start:
            side_opts = replace(opts, direction=0 if len(start) == 2 else next(iter(start)))
            branch = continue_branch(bp, model, side_opts, start=start)
            lo, hi = s_old.min(), s_old.max()
            fresh = [pt for pt in branch.points if pt.s > hi or pt.s < lo]
            labels = classify_branch(Branch(bp, fresh)) if fresh else []
            new = BranchDataset.from_branch(Branch(bp, fresh), labels, {})
            rows = sorted(old.rows + new.rows, key=lambda r: r[0])
            status, message = branch.status, branch.message
        else:
            rows, status, message = old.rows, old.meta.get("status", "ok"), old.meta.get("message", "")
        recomputed = len(rows) - len(old.rows)
    else:
        branch = continue_branch(bp, model, opts)
        labels = classify_branch(branch)
        rows = BranchDataset.from_branch(branch, labels, {}).rows
        status, message = branch.status, branch.message
        recomputed = len(rows)
    meta = _meta(cfg, stem, dataset_key=cfg.dataset_key, nmodes=cfg.nmodes, k=bp.k,
                 sign=bp.sign.value, lambda_star=bp.lambda_star, smax=opts.smax, status=status,
                 message=message, new_rows=recomputed)
    ds = BranchDataset(meta, rows)
    ds.write(d, stem)
    events = [] if status == "ok" else [("failure", rows[-1][0] if rows else 0.0, status, message)]
    write_csv(d / f"{stem}.events.csv", ["kind", "s", "status", "message"], events)
    summary = _summary(bp, ds, cfg, model, reduced=reduced)
    summary["status"] = status
    return ds, summary


def cmd_branch(cfg: RunConfig, out, *, resume: bool = False) -> CommandResult:
    """Continue one primary branch and classify its points."""
    d = _dataset_dir(cfg, out, "branch")
    bp = bifurcation_point(cfg["branch", "k"], cfg["branch", "sign"], cfg.params)
    ds, summary = _run_branch(cfg, d, bp, resume=resume)
    write_json(d / "summary.json", _meta(cfg, "branch", summary=summary))
    code = EXIT_OK if summary["status"] == "ok" else EXIT_NUMERICAL
    return CommandResult(code, d, f"{len(ds.rows)} points, status {summary['status']}")


def cmd_stability(cfg: RunConfig, out, *, resume: bool = False) -> CommandResult:
    """Trivial-state labels around lambda* and branch labels plus the exchange ratio."""
    d = _dataset_dir(cfg, out, "stability")
    sec = cfg.section("stability")
    p = cfg.params
    bp = bifurcation_point(cfg["branch", "k"], cfg["branch", "sign"], p)
    n, w = sec["samples"], sec["width"]
    offsets = w * np.arange(1, n + 1) / n
    lams = np.concatenate([bp.lambda_star - offsets[::-1], bp.lambda_star + offsets])
    trivial = classify_trivial(lams, bp, p)
    rows = [("trivial", lam, "", lab.tracked_eigenvalue, lab.label.value) for lam, lab in trivial.items()]
    model = _model(cfg)
    smax = sec["branch_smax"]
    branch = continue_branch(bp, model, _options(cfg, smax=smax, direction=0))
    labels = classify_branch(branch)
    rows += [("branch", pt.lam, pt.s, lab.tracked_eigenvalue, lab.label.value)
             for pt, lab in zip(branch.points, labels)]
    ratios = exchange_ratio(bp, model, sec["s_values"], tol=cfg.tol) if sec["s_values"] else []
    write_csv(d / "stability.csv", ["kind", "lambda", "s", "eigenvalue", "label"], rows)
    beta = d_lambda_eta(bp.k, bp.lambda_star, p)
    write_json(d / "stability.json", _meta(
        cfg, "stability", k=bp.k, sign=bp.sign.value, lambda_star=bp.lambda_star, beta_prime=beta,
        exchange_ratio=[{"s": s, "ratio": r, "target": t} for s, r, t in ratios],
        branch_status=branch.status))
    code = EXIT_OK if branch.status == "ok" else EXIT_NUMERICAL
    return CommandResult(code, d, f"{len(rows)} labels")


def cmd_resonance_atlas(cfg: RunConfig, out, *, resume: bool = False) -> CommandResult:
    """Resonance fields and nondegeneracy determinants over a (k, l, gamma) grid."""
    d = _dataset_dir(cfg, out, "resonance-atlas")
    sec = cfg.section("resonance")
    rows, notes = [], []
    for (k, l), gamma in itertools.product(sec["pairs"], sec["gamma_values"]):
        p = cfg.params.with_(gamma=gamma)
        e2 = resonance_field(k, l, p)
        det1 = det2 = lam = ""
        if e2 is not None:
            rec = nondegeneracy_checks(k, l, p, strict=False)
            det1, det2, lam = rec.determinant1, rec.determinant2, rec.lambda_star
            if not rec.certified:
                notes.append(f"({k},{l}) gamma={gamma}: a nondegeneracy determinant vanishes")
        rows.append((k, l, gamma, "" if e2 is None else e2, e2 is not None, det1, det2, lam))
    write_csv(d / "atlas.csv", ["k", "l", "gamma", "E_kl", "condition_4_2_holds", "det1", "det2",
                                "lambda_star"], rows)
    write_json(d / "atlas.json", _meta(cfg, "resonance-atlas", rows=len(rows), notes=notes,
                                       warnings=cfg.warnings))
    return CommandResult(EXIT_OK, d, f"{len(rows)} rows")


def cmd_secondary(cfg: RunConfig, out, *, resume: bool = False) -> CommandResult:
    """Primary branch near a resonance, its singular point and the secondary branch."""
    d = _dataset_dir(cfg, out, "secondary")
    sec = cfg.section("secondary")
    k, l, delta = sec["k"], sec["l"], sec["delta"]
    p = cfg.params
    report = {"k": k, "l": l, "delta": delta}
    if not any(np.isclose(delta, v, rtol=1e-12, atol=0.0) for v in sec["delta_ladder"]):
        report.update(status="no-event", message=f"delta {delta} is not on the configured ladder")
        write_json(d / "intersection.json", _meta(cfg, "secondary", report=report))
        return CommandResult(EXIT_NO_EVENT, d, report["message"])
    try:
        if p.gamma == 0.0 or resonance_field(k, l, p) is None:
            p = p.with_(gamma=sweep_resonant_vorticity(k, l, p))
    except (ValueError, VorticityRequiredError) as exc:
        raise ConfigError([f"[secondary] ({k},{l}): {exc}"]) from exc
    rec = nondegeneracy_checks(k, l, p)
    perturbed = p.with_field_squared(rec.e_field * (1.0 + delta))
    run = cfg.with_physics(gamma=perturbed.gamma, e0=perturbed.e0)
    bp = bifurcation_point(k, rec.sign, perturbed)
    report.update(gamma=perturbed.gamma, e_kl=rec.e_field, e0_squared=perturbed.e0**2,
                  lambda_star=bp.lambda_star, sign=rec.sign.value)
    model = _model(run)
    opts = _options(run, smax=sec["smax"], direction=0)
    primary = continue_branch(bp, model, opts)
    labels = classify_branch(primary)
    pmeta = _meta(cfg, "primary", dataset_key=cfg.dataset_key, nmodes=run.nmodes, k=k,
                  sign=bp.sign.value, lambda_star=bp.lambda_star, smax=opts.smax,
                  status=primary.status, message=primary.message)
    BranchDataset.from_branch(primary, labels, pmeta).write(d, "primary")
    events = detect_singularities(primary, model, tol=opts.tol)
    report["events"] = [{"s": e.s, "lambda": e.point.lam, "mode": e.mode, "kind": e.kind,
                         "bracket": list(e.s_bracket)} for e in events]
    hits = [e for e in events if e.mode % k != 0]
    if not hits:
        report.update(status="no-event", message=f"no singular point within |s| <= {opts.smax}")
        write_json(d / "intersection.json", _meta(cfg, "secondary", report=report))
        return CommandResult(EXIT_NO_EVENT, d, report["message"])
    event = hits[0]
    secondary = switch_branch(event, model, opts)
    smeta = _meta(cfg, "secondary", dataset_key=cfg.dataset_key, nmodes=run.nmodes, k=event.mode,
                  sign=bp.sign.value, lambda_star=event.point.lam, smax=opts.smax,
                  status=secondary.status, message=secondary.message)
    # stability of the secondary branch is not classified
    BranchDataset.from_branch(secondary, None, smeta).write(d, "secondary")
    amps = [abs(pt.state.eta.coeffs[event.mode - 1]) for pt in secondary.points]
    report.update(status=secondary.status, s=event.s, lambda_event=event.point.lam, mode=event.mode,
                  event_residual=event.point.residual_norm, secondary_points=len(secondary.points),
                  min_mode_amplitude=min(amps) if amps else None,
                  max_residual=max((pt.residual_norm for pt in secondary.points), default=None))
    write_json(d / "intersection.json", _meta(cfg, "secondary", report=report))
    code = EXIT_OK if secondary.status == "ok" else EXIT_NUMERICAL
    return CommandResult(code, d, f"event at s = {event.s:.6g}, {len(secondary.points)} secondary points")


def _sweep_job(values: dict, job: dict, directory: str) -> dict:
    """One (k, sign, e0, gamma) branch; runs in a worker process."""
    from .io import RunConfig as _RC
    from .params import WaveParams

    vals = {s: dict(v) for s, v in values.items()}
    vals["physics"].update(e0=job["e0"], gamma=job["gamma"])
    vals["branch"].update(k=job["k"], sign=job["sign"])
    cfg = _RC(WaveParams(**vals["physics"]), vals)
    stem = job["id"]
    row = dict(job, status="error", points=0, lambda_pp_fit=None, lambda_pp_closed=None, message="")
    try:
        bp = bifurcation_point(job["k"], job["sign"], cfg.params)
        ds, summary = _run_branch(cfg, Path(directory), bp, resume=False, stem=stem, reduced=False)
        write_json(Path(directory) / f"{stem}.summary.json", summary)
        row.update(status=summary["status"], points=len(ds.rows),
                   lambda_pp_fit=summary["lambda_pp_fit"], lambda_pp_closed=summary["lambda_pp_closed"])
    except (InadmissibleFieldError, *NUMERICAL_ERRORS, ValueError) as exc:
        row["message"] = f"{type(exc).__name__}: {exc}"
    return row


INDEX_COLUMNS = ["id", "k", "sign", "e0", "gamma", "status", "points", "lambda_pp_fit",
                 "lambda_pp_closed", "message"]


def cmd_sweep(cfg: RunConfig, out, *, resume: bool = False, jobs: int = 1) -> CommandResult:
    """Independent branches over (k, sign, e0, gamma), one file set per job."""
    d = _dataset_dir(cfg, out, "sweep")
    sec = cfg.section("sweep")
    grid = list(itertools.product(sec["k_values"], sec["signs"], sec["e0_values"], sec["gamma_values"]))
    todo = [{"id": f"job{i:04d}", "k": k, "sign": sg, "e0": e0, "gamma": g}
            for i, (k, sg, e0, g) in enumerate(grid)]
    done = {}
    if resume and (d / "index.csv").exists():
        header, raw = read_csv(d / "index.csv")
        for r in raw:
            rec = dict(zip(header, r))
            if rec["status"] == "ok" and (d / f"{rec['id']}.csv").exists():
                done[rec["id"]] = rec
    pending = [j for j in todo if j["id"] not in done]
    values = cfg.values
    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, [values] * len(pending), pending,
                                    [str(d)] * len(pending)))
    else:
        results = [_sweep_job(values, j, str(d)) for j in pending]
    merged = {r["id"]: [r[c] if r[c] is not None else "" for c in INDEX_COLUMNS] for r in results}
    for jid, rec in done.items():
        merged[jid] = [rec[c] for c in INDEX_COLUMNS]
    rows = [merged[j["id"]] for j in todo]
    write_csv(d / "index.csv", INDEX_COLUMNS, rows)
    failed = sum(1 for r in rows if r[5] != "ok")
    write_json(d / "sweep.json", _meta(cfg, "sweep", jobs=len(rows), failed=failed,
                                       reused=len(done)))
    code = EXIT_OK if failed == 0 else EXIT_NUMERICAL
    return CommandResult(code, d, f"{len(rows)} jobs, {failed} failed, {len(done)} reused")


COMMANDS = {
    "dispersion": cmd_dispersion,
    "points": cmd_points,
    "branch": cmd_branch,
    "stability": cmd_stability,
    "resonance-atlas": cmd_resonance_atlas,
    "secondary": cmd_secondary,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ehdwaves", description="Bifurcating EHD interfacial waves.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or "").splitlines()[0])
        sp.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
        sp.add_argument("--out", type=Path, help=f"output root (default ./{DEFAULT_OUT})")
        sp.add_argument("--resume", action="store_true", help="extend an existing dataset")
        sp.add_argument("--jobs", type=int, default=1, help=f"worker processes; {JOBS_ENV} overrides")
    return ap


def _workers(requested: int) -> int:
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError([f"{JOBS_ENV}={env!r}: not an integer"]) from exc
        if n < 1:
            raise ConfigError([f"{JOBS_ENV}={env!r}: must be >= 1"])
        return n
    if requested < 1:
        raise ConfigError([f"--jobs {requested}: must be >= 1"])
    return requested


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else validate_config("", source="<defaults>")
        for w in cfg.warnings:
            print(f"warning: {w}", file=sys.stderr)
        out = args.out or cfg["run", "out"] or DEFAULT_OUT
        fn = COMMANDS[args.command]
        kwargs = {"resume": args.resume}
        if args.command == "sweep":
            kwargs["jobs"] = _workers(args.jobs)
        else:
            _workers(args.jobs)
        result = fn(cfg, out, **kwargs)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InadmissibleFieldError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.command}: {result.message} -> {result.directory}")
    return result.code


if __name__ == "__main__":
    sys.exit(main())
