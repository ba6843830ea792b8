"""Batch front end: ``python -m geoflow3b <command> --config run.json``.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 failed
acceptance-level audit under ``--strict``.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, stochastic
from .config import COMMANDS, SCHEMA, load_config, setup_run
from .deviation import (DeviationState, finite_difference_deviation, growth_exponent,
                        integrate_deviation)
from .errors import ConfigError, NumericalError
from .geodesic import (IDX_T, SLICE_EXT, SLICE_RHO, SLICE_XI, SLICE_X, equivalence_check,
                       initial_state_from_phase, integrate_geodesic, local_terms, time_rate)
from .io import RunDirectory
from .newtonian import integrate_newton

__all__ = ["main", "build_parser", "run_command"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_STRICT = 0, 2, 3, 4

# acceptance-level audit thresholds
CONSERVATION_TOL = 1e-8
FRAME_TOL = 1e-12
DEVIATION_FD_TOL = 1e-3
KL_TOL = 0.05
RESIDUAL_TOL = 1e-8
MASS_TOL = 1e-8


class Audit:
    """Named checks collected during a command; failures decide the strict exit code."""

    def __init__(self):
        self.checks = []

    def check(self, name, value, limit):
        ok = value is not None and bool(np.isfinite(value)) and value <= limit
        self.checks.append({"name": name, "value": value, "limit": limit, "passed": bool(ok)})
        return ok

    @property
    def failed(self):
        return [c for c in self.checks if not c["passed"]]


# ----------------------------------------------------------------------------
# shared pieces
# ----------------------------------------------------------------------------

def _newton(setup, t_end=None):
    it = setup.integrator
    return integrate_newton(setup.phase, setup.system, it["t_end"] if t_end is None else t_end,
                            rtol=it["rtol"], atol=it["atol"], method=it["method"], dt=it.get("dt"),
                            max_step=it["max_step"])


def _geodesic(setup, trace=False, s_end=None):
    it = setup.integrator
    gauge = setup.gauge()
    state0, _ = initial_state_from_phase(setup.phase, setup.system, gauge.current())
    if s_end is None and "s_end" in it:
        s_end = it["s_end"]
    t_end = None if s_end is not None else it["t_end"]
    return integrate_geodesic(state0, setup.system, s_end=s_end, t_end=t_end, rtol=it["rtol"],
                              atol=it["atol"], gauge=gauge, order=it["order"],
                              max_step=it["max_step"], g_guard=it["g_guard"], trace=trace,
                              convention=it["convention"])


def _angular_drift(L):
    scale = np.linalg.norm(L[0])
    dev = float(np.max(np.linalg.norm(L - L[0], axis=1)))
    return dev / scale if scale > 1e-12 else dev


def _write_newton(run, traj):
    cols = ["t"] + [f"q{k}" for k in range(1, 7)] + [f"p{k}" for k in range(1, 7)] + \
        ["H", "L1", "L2", "L3"]
    rows = np.column_stack([traj.t, traj.q, traj.p, traj.energy, traj.angular_momentum])
    run.csv("newton.csv", cols, rows,
            "Newtonian trajectory: time, mass-weighted Jacobi positions q = (r_w, R_w), tilde "
            "momenta p, Hamiltonian H and angular momentum L")


def _write_geodesic(run, traj, frame_trace=False):
    cols = ["s", "t", "x1", "x2", "x3", "xi1", "xi2", "xi3", "rho1", "rho2", "rho3",
            "ext1", "ext2", "ext3", "r", "R", "theta"]
    y = traj.y
    rows = np.column_stack([traj.s, y[:, IDX_T], y[:, SLICE_X], y[:, SLICE_XI], y[:, SLICE_RHO],
                            y[:, SLICE_EXT], traj.observables()])
    run.csv("geodesic.csv", cols, rows,
            "Geodesic trajectory: arc length s, Newtonian time t, local coordinates x, velocity "
            "xi, internal point rho, external angles (times R0) and physical (r, R, theta)")
    names = ["s", "hamiltonian", "J", "frame", "line_element", "sphere", "external_frame", "g", "H"]
    run.csv("audits.csv", names, np.column_stack([traj.audits[n] for n in names]),
            "Per-step audits: relative H error, first-integral error, frame residual, "
            "line-element residual, sphere normal form residual, external frame residual, g, H")
    if frame_trace:
        cols = ["s"] + [f"alpha{k}" for k in range(1, 4)] + [f"beta{k}" for k in range(1, 4)] + \
            [f"gamma{k}" for k in range(1, 4)] + ["residual"]
        run.csv("frame_trace.csv", cols, np.array(traj.frame_trace).reshape(-1, len(cols)),
                "Frame coefficients at every accepted step")


def _geodesic_audit(audit, traj):
    audit.check("hamiltonian_drift", traj.max_audit("hamiltonian"), CONSERVATION_TOL)
    audit.check("first_integral_drift", traj.max_audit("J"), CONSERVATION_TOL)
    audit.check("frame_residual", traj.max_audit("frame"), FRAME_TOL)


def _geodesic_summary(traj):
    return {"nodes": int(len(traj.s)), "s_end": float(traj.s[-1]), "t_end": float(traj.t[-1]),
            "rejected_steps": int(traj.rejected_steps), "gauge_policy": traj.gauge_policy,
            "order": traj.order, "branch_events": traj.branch_events,
            "max_audits": {n: traj.max_audit(n) for n in
                           ("hamiltonian", "J", "frame", "line_element", "external_frame")}}


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_simulate_newton(setup, run, audit, args):
    traj = _newton(setup)
    _write_newton(run, traj)
    e, l = traj.energy_drift(), _angular_drift(traj.angular_momentum)
    audit.check("energy_drift", e, CONSERVATION_TOL)
    audit.check("angular_momentum_drift", l, CONSERVATION_TOL)
    return {"steps": int(len(traj.t)), "nfev": int(traj.nfev), "energy_drift": e,
            "angular_momentum_drift": l}


def cmd_simulate_geodesic(setup, run, audit, args):
    traj = _geodesic(setup, trace=args.frame_trace)
    _write_geodesic(run, traj, args.frame_trace)
    _geodesic_audit(audit, traj)
    return _geodesic_summary(traj)


def cmd_compare(setup, run, audit, args):
    block = setup.config.get("compare", {})
    geo = _geodesic(setup, trace=args.frame_trace)
    newton = _newton(setup, t_end=max(float(geo.t[-1]), setup.phase.t + 1e-300))
    rep = equivalence_check(newton, geo, setup.system, tol=block.get("tol", 1e-5),
                            midpoints=block.get("midpoints", True))
    _write_newton(run, newton)
    _write_geodesic(run, geo, args.frame_trace)
    t = geo.t
    obs_n = newton.observables_at(np.clip(t, newton.t[0], newton.t[-1]), setup.system.masses)
    run.csv("comparison.csv", ["s", "t", "r_geo", "R_geo", "theta_geo", "r_newton", "R_newton",
                               "theta_newton"],
            np.column_stack([geo.s, t, geo.observables(), obs_n]),
            "Internal observables of both representations at the geodesic nodes")
    run.json("equivalence.json", rep.to_dict(), "Equivalence report")
    audit.check("equivalence_max_relative", rep.max_relative, rep.tolerance)
    _geodesic_audit(audit, geo)
    return {"equivalence": rep.to_dict(), "geodesic": _geodesic_summary(geo),
            "newton_energy_drift": newton.energy_drift()}


def cmd_deviate(setup, run, audit, args):
    block = setup.config.get("deviation", {})
    base = _geodesic(setup)
    if base.gauge_policy != "fixed":
        raise ConfigError("deviate needs a fixed gauge")
    O = setup.gauge().current()
    dev0 = DeviationState(block.get("zeta0", [1.0, 0.0, 0.0]), block.get("zeta_dot0", [0.0, 0.0, 0.0]))
    s_out = np.linspace(base.s[0], base.s[-1], block.get("n_out", 201))
    try:
        traj = integrate_deviation(base, dev0, s_out=s_out, gauge=O)
    except ValueError as exc:
        raise ConfigError(f"deviate: {exc}") from exc
    run.csv("deviation.csv", ["s", "zeta1", "zeta2", "zeta3", "norm", "log_norm"], traj.rows(),
            "Deviation vector along the base geodesic with its norm and log-norm")
    summary = {"s_end": float(base.s[-1]), "final_norm": float(traj.norm[-1])}
    try:
        fit = growth_exponent(traj, block.get("window"), metric=block.get("metric_norm", False))
        summary["growth"] = fit.to_dict()
    except ValueError as exc:
        summary["growth"] = {"error": str(exc)}
    if block.get("fd_check", False):
        fd = finite_difference_deviation(base, dev0, eta=block.get("fd_eta", 1e-6), s_out=s_out,
                                         gauge=O)
        err = float(np.max(np.linalg.norm(fd - traj.zeta, axis=1)) / np.max(traj.norm))
        run.csv("deviation_fd.csv", ["s", "zeta1", "zeta2", "zeta3"], np.column_stack([s_out, fd]),
                "Two-trajectory finite-difference deviation")
        summary["fd_relative_error"] = err
        audit.check("deviation_vs_finite_difference", err, DEVIATION_FD_TOL)
    run.json("deviation.json", summary, "Deviation summary")
    _geodesic_audit(audit, base)
    return summary


def _noise(config, ds_default=1e-3):
    nb = config.get("noise", {})
    return stochastic.NoiseSpec(nb.get("eps", 0.0), config["seed"], nb.get("ds", ds_default))


def _phase_labeler(setup, O, thresholds):
    system = setup.system
    masses = [system.masses.m1, system.masses.m2, system.masses.m3]

    def label(final):
        out = []
        for y in final:
            if not np.all(np.isfinite(y)):
                out.append("censored")
                continue
            try:
                frame, _, _, _ = local_terms(y[6:9], system, O)
                rate = frame.matrix @ y[:3] / time_rate(y[6:9], system)
                window = [analysis.internal_lab_state(y[6:9], rate, system)]
                out.append(analysis.classify_channel(window, masses, system.potential,
                                                     system.energy, system.R0, thresholds).label)
            except NumericalError:
                out.append("undecided")
        return out
    return label


def _ensemble_model(setup):
    """``(model, initial sampler, labeler, default axes)`` from the ensemble block."""
    config = setup.config
    eb = config.get("ensemble", {})
    nb = config.get("noise", {})
    kind = eb.get("model", "phase")
    O = setup.gauge().current()
    state0, _ = initial_state_from_phase(setup.phase, setup.system, O)
    xi0, rho0 = state0.xi, state0.rho
    std = eb.get("initial_std", 0.0)
    _, _, a0, lam0 = local_terms(rho0, setup.system, O)
    if kind == "phase":
        model = stochastic.PhaseModel(setup.system, O, nb.get("noise_on", "all"))
        mean = np.concatenate([xi0, np.zeros(3), rho0])
        spread = np.concatenate([np.full(3, std), np.zeros(6)])
        thr = analysis.ChannelThresholds(**{k: v for k, v in config.get("analyze", {})
                                            .get("channels", {}).items() if k != "final"})
        return model, stochastic.gaussian_initial(mean, spread), _phase_labeler(setup, O, thr), (0, 3)
    if kind == "frozen-phase":
        a = eb.get("a", a0)
        model = stochastic.FrozenPhaseModel(a, eb.get("lam2", lam0), nb.get("noise_on", "all"))
        mean = np.concatenate([xi0, np.zeros(3)])
        spread = np.concatenate([np.full(3, std), np.zeros(3)])
        return model, stochastic.gaussian_initial(mean, spread), None, (0, 3)
    # metric fluctuations along the deterministic base path
    s_end = eb.get("s_end", 1.0)
    base = _geodesic(setup, s_end=s_end)

    def coefficients(s):
        rho = base.at(min(s, base.s[-1]))[SLICE_RHO]
        _, _, a, lam2 = local_terms(rho, setup.system, O)
        return a, lam2
    model = stochastic.MetricModel(coefficients, nb.get("calculus", "ito"))
    return model, stochastic.gaussian_initial(xi0, std), None, (0, 1)


def _density_rows(dens):
    idx = np.argwhere(dens.counts > 0)
    centers = dens.centers
    rows = [[*i, *(centers[k][j] for k, j in enumerate(i)), dens.counts[tuple(i)],
             dens.probabilities[tuple(i)], dens.density[tuple(i)]] for i in idx]
    d = len(centers)
    cols = [f"bin{k + 1}" for k in range(d)] + [f"center_{l}" for l in dens.labels] + \
        ["count", "probability", "density"]
    return cols, np.array(rows, dtype=float).reshape(-1, len(cols))


def _run_ensemble(setup, keep_samples=False, stamps=None):
    config = setup.config
    eb = config.get("ensemble", {})
    model, initial, labeler, axes = _ensemble_model(setup)
    noise = _noise(config)
    s_end = eb.get("s_end", 1.0)
    res = stochastic.run_ensemble(model, initial, eb.get("n_paths", 64), s_end, noise,
                                  stamps=eb.get("stamps") if stamps is None else stamps,
                                  axes=eb.get("axes", axes), bins=eb.get("bins", 64),
                                  ranges=eb.get("ranges"), block=eb.get("block", 1024),
                                  labeler=labeler, keep_samples=keep_samples)
    return res, model


def _write_ensemble(run, res, model):
    for k, dens in enumerate(res.densities):
        cols, rows = _density_rows(dens)
        run.csv(f"density_{k:03d}.csv", cols, rows,
                f"Occupied histogram bins at s={dens.s:.17g} (edges in ensemble.json)")
    cols = ["path", "censored", "censored_step"] + list(model.labels)
    rows = np.column_stack([np.arange(res.n_paths), res.censored, res.censored_at, res.final])
    run.csv("paths.csv", cols, rows, "Final state of every path with its censoring flag")
    info = {**res.manifest(), "labels": list(res.densities[0].labels),
            "densities": [{"s": d.s, "edges": [e.tolist() for e in d.edges], "overflow": d.overflow,
                           "occupied": d.occupied(), "mass": d.mass} for d in res.densities]}
    if res.labels is not None:
        info["path_labels"] = res.labels
        info["channel_fractions"] = {c: str(f) for c, f in
                                     analysis.channel_fractions(res.labels).items()}
    run.json("ensemble.json", info, "Ensemble geometry, noise, censoring and path labels")
    return info


def cmd_ensemble(setup, run, audit, args):
    res, model = _run_ensemble(setup)
    info = _write_ensemble(run, res, model)
    for d in res.densities:
        audit.check(f"density_mass_s={d.s:g}", abs(d.mass - 1.0) if d.n_inside else 1.0, MASS_TOL)
    return {k: info[k] for k in ("n_paths", "censored", "stamps", "bins", "noise")}


def _gaussian_p0(mean, std):
    mean, std = np.asarray(mean, float), np.asarray(std, float)

    def p0(X):
        return np.exp(-0.5 * np.sum(((X - mean) / std) ** 2, axis=-1))
    return p0


def cmd_fp(setup, run, audit, args):
    config = setup.config
    fb = config["fp"]
    nb = config.get("noise", {})
    grid = fb["grid"]
    d = len(grid)
    axes = fb.get("axes", (0, 3)[:d] if fb["kind"] == "phase" else (0, 1)[:d])
    if len(axes) != d:
        raise ConfigError("fp.axes and fp.grid must have the same length")
    for lo, hi, n in grid:
        if not (hi > lo and n >= 2 and float(n).is_integer()):
            raise ConfigError("fp.grid entries must be [lo, hi, cells] with hi > lo, cells >= 2")
    edges = [np.linspace(lo, hi, int(n) + 1) for lo, hi, n in grid]
    lam2 = fb.get("lam2", 0.0)
    calculus = nb.get("calculus", "ito")
    if fb["kind"] == "phase":
        red = stochastic.frozen_phase_reduction(fb["a"], lam2, axes, fb.get("fixed"))
    else:
        red = stochastic.frozen_momentum_reduction(fb["a"], lam2, axes, fb.get("fixed"), calculus,
                                                   fb.get("frozen_b"))
    mean = fb.get("initial_mean", [0.5 * (g[0] + g[1]) for g in grid])
    std = fb.get("initial_std", [0.05 * (g[1] - g[0]) for g in grid])
    if len(mean) != d or len(std) != d:
        raise ConfigError("fp.initial_mean/initial_std must match the grid dimension")
    eps = nb.get("eps", 0.01)
    if np.ndim(eps) != 0:
        raise ConfigError("fp needs a scalar noise power")
    sol = stochastic.fp_solve(red.drift, edges, _gaussian_p0(mean, std), fb["s_end"], eps,
                              red.bmat, red.calculus, fb.get("dt"), fb.get("cfl", 0.25))
    mesh = np.meshgrid(*sol.centers, indexing="ij")
    cols = [f"center_{l}" for l in red.labels] + ["density"]
    run.csv("fp_grid.csv", cols, np.column_stack([m.ravel() for m in mesh] + [sol.density.ravel()]),
            "Fokker-Planck density on the cell centres")
    m, cov = sol.moments()
    summary = {"s_end": sol.s, "steps": sol.steps, "dt": sol.dt, "mass": sol.mass,
               "mean": m, "covariance": cov, "labels": list(red.labels), "calculus": red.calculus}
    audit.check("fp_mass_conservation", abs(sol.mass - 1.0), MASS_TOL)
    if "mc_paths" in fb:
        ds = nb.get("ds", 1e-3)
        factor = fb.get("coarsen", 1)
        coarse = sol.coarsen(factor)
        noise = stochastic.NoiseSpec(eps, config["seed"], ds)
        res = stochastic.run_ensemble(red, stochastic.gaussian_initial(mean, std), fb["mc_paths"],
                                      fb["s_end"], noise, bins=[len(e) - 1 for e in coarse.edges],
                                      ranges=[(e[0], e[-1]) for e in coarse.edges])
        kl = analysis.kl_deviation(coarse, res.densities[0])
        cols, rows = _density_rows(res.densities[0])
        run.csv("mc_density.csv", cols, rows, "Monte Carlo histogram on the coarsened FP grid")
        summary["kl_fp_mc"] = kl.to_dict()
        summary["mc_censored"] = res.n_censored
        audit.check("kl_fp_vs_mc", kl.d, KL_TOL)
    run.json("fp.json", summary, "Fokker-Planck run summary")
    return summary


def cmd_analyze(setup, run, audit, args):
    config = setup.config
    ab = config.get("analyze", {})
    report = {}
    if "ensemble" in config:
        eb = config["ensemble"]
        s_end = eb.get("s_end", 1.0)
        ds = config.get("noise", {}).get("ds", 1e-3)
        n_st = int(round(s_end / ds))
        stamps = eb.get("stamps") or [ds * k for k in np.unique(np.linspace(0, n_st, 7).round().astype(int))]
        res, model = _run_ensemble(setup, keep_samples=True, stamps=stamps)
        X = [res.samples[float(s)] for s in res.stamps]
        ranges = eb.get("ranges") or stochastic._auto_ranges(np.concatenate(X))
        dens = [stochastic.histogram(x, eb.get("bins", 64), ranges, res.densities[0].labels, s)
                for x, s in zip(X, res.stamps)]
        alpha = ab.get("kl", {}).get("alpha", 1.0)
        kls = [analysis.kl_deviation(dens[k], dens[0], alpha=alpha) for k in range(1, len(dens))]
        sep = [k.s_a - k.s_b for k in kls]
        rows = np.array([[k.s_a, k.s_b, k.d, k.variance] for k in kls]).reshape(-1, 4)
        run.csv("kl_series.csv", ["s_a", "s_b", "d", "variance"], rows,
                "Tube deviation of every stamp against the first")
        kl_rep = {"series": [k.to_dict() for k in kls]}
        try:
            kl_rep["chaos"] = analysis.chaos_slope(sep, [k.d for k in kls],
                                                   ab.get("kl", {}).get("r2_threshold", 0.9)).to_dict()
        except ValueError as exc:
            kl_rep["chaos"] = {"error": str(exc)}
        report["kl"] = kl_rep
        if res.labels is not None:
            fr = analysis.channel_fractions(res.labels)
            final = ab.get("channels", {}).get("final", "(12)+3")
            tp = analysis.transition_probability(res.labels, final)
            report["channels"] = {"fractions": {c: str(f) for c, f in fr.items()},
                                  "sum": str(sum(fr.values())), "transition": tp.to_dict()}
    O = setup.gauge().current()
    state0, _ = initial_state_from_phase(setup.phase, setup.system, O)
    za = ab.get("zero_accel", {})
    rho = np.asarray(za.get("rho", state0.rho), dtype=float)
    zres = analysis.zero_accel_solve(rho=rho, system=setup.system, n_seeds=za.get("n_seeds", 64),
                                     seed=config["seed"] % (2 ** 63))
    if zres.found:
        run.csv("zero_accel.csv", ["xi1", "xi2", "xi3", "a1", "a2", "a3", "residual", "dimension"],
                np.column_stack([zres.solutions, zres.residuals, zres.dimensions]),
                "Zero-acceleration solutions (xi, a) with residual and local dimension")
        audit.check("zero_accel_residual", float(np.max(zres.residuals)), RESIDUAL_TOL)
    report["zero_accel"] = {"rho": rho, **zres.to_dict()}
    if "level_surface" in ab:
        lb = ab["level_surface"]
        surfaces = []
        for k, h in enumerate(lb["h"]):
            try:
                ls = analysis.level_surface_sample(h, setup.system, lb["box"], lb.get("n_rays", 200))
            except NumericalError as exc:
                surfaces.append({"h": h, "error": str(exc)})
                continue
            run.csv(f"level_surface_{k:03d}.csv", ["rho1", "rho2", "rho3", "residual", "component"],
                    ls.rows(), f"Level surface samples for h={h:.17g}")
            mx = float(np.max(ls.residuals)) if len(ls.residuals) else 0.0
            surfaces.append({"h": h, "points": int(len(ls.points)), "components": ls.n_components,
                             "whole_box": ls.whole_box, "max_residual": mx})
            audit.check(f"level_surface_residual_h={h:g}", mx, RESIDUAL_TOL)
        report["level_surfaces"] = surfaces
    run.json("analysis.json", report, "KL, channel and bound-state reports")
    return report


HANDLERS = {"simulate-newton": cmd_simulate_newton, "simulate-geodesic": cmd_simulate_geodesic,
            "compare": cmd_compare, "deviate": cmd_deviate, "ensemble": cmd_ensemble,
            "fp": cmd_fp, "analyze": cmd_analyze}


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

HELP = {
    "simulate-newton": "integrate the Newtonian three-body problem",
    "simulate-geodesic": "integrate the co-evolved geodesic flow",
    "compare": "run both representations and compare (r, R, theta)(t)",
    "deviate": "propagate geodesic deviation and fit its growth exponent",
    "ensemble": "Monte Carlo ensemble of the noisy flow with channel labels",
    "fp": "solve the reduced Fokker-Planck equation and compare with Monte Carlo",
    "analyze": "zero-acceleration points and level surfaces of the conformal factor",
}


def build_parser():
    p = argparse.ArgumentParser(prog="geoflow3b", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name, help=HELP[name])
        c.add_argument("--config", required=True, help="JSON run configuration")
        c.add_argument("--out", help="output directory (overrides config 'output')")
        c.add_argument("--strict", action="store_true",
                       help="exit with code 4 when an acceptance-level audit fails")
        c.add_argument("--frame-trace", action="store_true",
                       help="write frame coefficients at every accepted step")
    sub.add_parser("schema", help="print the configuration JSON schema")
    return p


def run_command(command, config, out, strict=False, frame_trace=False):
    """Run one command on a configuration dict; returns ``(exit_code, manifest)``."""
    setup = setup_run(config)
    out = Path(out or setup.config.get("output", "run"))
    run = RunDirectory(out, command, setup.config)
    run.json("config.resolved.json", setup.config, "Configuration with the seed filled in")
    audit = Audit()
    args = argparse.Namespace(frame_trace=frame_trace, strict=strict)
    try:
        summary = HANDLERS[command](setup, run, audit, args)
    except NumericalError as exc:
        manifest = run.finish({"error": f"{type(exc).__name__}: {exc}", "audits": audit.checks},
                              status="numerical-failure", exit_code=EXIT_NUMERICAL)
        return EXIT_NUMERICAL, manifest
    code = EXIT_STRICT if strict and audit.failed else EXIT_OK
    status = "ok" if not audit.failed else "audit-failed"
    manifest = run.finish({"summary": summary, "audits": audit.checks}, status=status,
                          exit_code=code)
    return code, manifest


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(SCHEMA, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        config = load_config(args.config)
        code, manifest = run_command(args.command, config, args.out, args.strict, args.frame_trace)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for c in manifest["diagnostics"].get("audits", []):
        if not c["passed"]:
            print(f"audit failed: {c['name']} = {c['value']} (limit {c['limit']})", file=sys.stderr)
    print(f"{args.command}: {manifest['status']} -> {Path(args.out or config.get('output', 'run'))}")
    return code


if __name__ == "__main__":
    sys.exit(main())
