"""Command-line front end.

Subcommands map onto the library layers: `qmt` (steady state and Q at
one operating point), `alpha` (correction model), `qts` (trajectory
ensembles), `hbt` (timestamp correlation), `calibrate` (atom/photon
scale fit), `scan` (named parameter scans with figures).

Every run writes delimited tables plus a JSON manifest carrying the
config hash, package versions and wall time; the report paths also
render figures next to the tables.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import calibration, extended, figures, hbt, qmt, scans, trajectory
from .params import MicrolaserParams, baseline_params


def _fail(exc: BaseException) -> int:
    sys.stderr.write(json.dumps(
        {"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return 1


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _params_from_config(cfg: dict) -> MicrolaserParams:
    if "dimensionless" in cfg:
        d = cfg["dimensionless"]
        p = MicrolaserParams.for_dimensionless(
            n_ex=d["n_ex"], theta=d["theta"],
            gamma_c_t_int=d["gamma_c_t_int"],
            dv_over_v0=d.get("dv_over_v0", 0.0))
    elif "params" in cfg:
        p = MicrolaserParams.from_dict(cfg["params"])
    else:
        p = baseline_params(v0=cfg.get("v0", 780.0),
                            dv_over_v0=cfg.get("dv_over_v0", 0.0))
    if "atom_number" in cfg:
        p = p.with_atom_number(float(cfg["atom_number"]))
    return p


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_csv(path: Path, columns: dict) -> Path:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float)
                            for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names),
               comments="", fmt="%.12e")
    return path


def write_manifest(out_dir: Path, command: str, cfg: dict,
                   outputs: list, t0: float, seed) -> Path:
    import matplotlib
    import numba
    import scipy
    man = {
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "outputs": sorted(Path(p).name for p in outputs),
        "versions": {
            "microlaser": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "wall_time_s": round(time.monotonic() - t0, 3),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------

def cmd_qmt(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    params = _params_from_config(cfg)
    out = _outdir(args)
    dist = params.distribution()
    stats = qmt.steady_state_distribution(params, dist)
    branch = qmt.selected_branch(params, dist, stats=stats)
    q = qmt.mandel_q_linearized(params, dist, branch=branch)
    eta = cfg.get("eta", scans.default_eta(dist.dv_over_v0))
    q0 = extended.corrected_q(q, eta * q * q,
                              params.gamma_c * params.t_int())
    outputs = []
    pcsv = out / "distribution.csv"
    stats.to_csv(pcsv)
    outputs.append(pcsv)
    summary = stats.summary() | {
        "q_linearized": q, "q_corrected": q0, "eta": eta,
        "branch_n0": branch.n0,
        "restoring_rate": branch.restoring_rate,
        "output_flux": qmt.output_flux(params, stats.n_mean),
        "validity": scans.validity_check(params, branch.n0),
        "params": params.to_dict(),
    }
    sjson = out / "summary.json"
    sjson.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs.append(sjson)
    outputs.append(figures.plot_distribution(stats, out / "distribution.png"))
    outputs.append(write_manifest(out, "qmt", cfg, outputs, t0, args.seed))
    print(f"n_mean={stats.n_mean:.4f} Q={q:+.4f} Q0={q0:+.4f}")
    return 0


def _curve_arrays(curve_pairs):
    q = np.array([c[0] for c in curve_pairs])
    b = np.array([c[1] for c in curve_pairs])
    return q, b


def cmd_alpha(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    out = _outdir(args)
    n_ex = cfg.get("n_ex", 1000.0)
    dv = cfg.get("dv_over_v0", 0.0)
    pairs = extended.bracket_curve(n_ex, dv)
    q, bracket = _curve_arrays(pairs)
    if "points_csv" in cfg:
        pts = extended.load_alpha_points_csv(cfg["points_csv"])
        model = extended.fit_eta(pts, pairs, dv_over_v0=dv, n_ex=n_ex)
    else:
        model = extended.build_alpha_model(
            cfg.get("eta", scans.default_eta(dv)), 0.0, dv, n_ex=n_ex)
    outputs = []
    mjson = out / "alpha_model.json"
    model.to_json(mjson)
    outputs.append(mjson)
    outputs.append(write_csv(out / "alpha_curve.csv", {
        "q_qmt": q, "bracket": bracket,
        "alpha": model.eta * bracket,
        "alpha_quadratic": model.eta * q * q}))
    outputs.append(figures.plot_alpha_curves(
        [{"q": q, "alpha": model.eta * bracket,
          "quadratic": model.eta * q * q,
          "label": f"dv/v0={dv:g}"}], out / "alpha.png"))
    outputs.append(write_manifest(out, "alpha", cfg, outputs, t0, args.seed))
    print(f"eta={model.eta:.4f} +- {model.eta_err:.4f}")
    return 0


def _trajectory_config(cfg: dict, seed: int) -> trajectory.TrajectoryConfig:
    params = _params_from_config(cfg)
    gc = params.gamma_c
    duration = cfg.get("duration",
                       cfg.get("duration_over_gamma_c", 2000.0) / gc)
    burn_in = cfg.get("burn_in",
                      cfg.get("burn_in_over_gamma_c", 200.0) / gc)
    n_max = cfg.get("n_max") or trajectory.suggested_n_max(
        params, params.distribution())
    return trajectory.TrajectoryConfig(
        params=params, n_max=int(n_max),
        max_simultaneous_atoms=int(cfg.get("max_simultaneous_atoms", 3)),
        duration=float(duration), burn_in=float(burn_in),
        seed=int(cfg.get("seed", seed)),
        include_atomic_decay=bool(cfg.get("include_atomic_decay", False)))


def _write_slope_outputs(res: dict, out: Path, stem: str) -> list:
    outputs = [write_csv(out / "slope_points.csv", {
        "gamma_c_t_int": [p["gamma_c_t_int"] for p in res["points"]],
        "n_mean": [p["n_mean"] for p in res["points"]],
        "mandel_q": [p["mandel_q"] for p in res["points"]],
        "q_err": [p["q_err"] for p in res["points"]]})]
    fit_json = out / "slope_fit.json"
    fit_json.write_text(json.dumps(
        {k: res[k] for k in ("alpha", "alpha_err", "q_intercept",
                             "q_intercept_err", "r_squared")},
        indent=2, sort_keys=True) + "\n")
    outputs.append(fit_json)
    outputs.append(figures.plot_slope_scan(res["points"], res,
                                           out / f"{stem}.png"))
    return outputs


def cmd_qts(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    out = _outdir(args)
    config = _trajectory_config(cfg, args.seed)
    outputs = []
    if "gamma_c_t_int_values" in cfg:
        res = trajectory.alpha_slope_scan(
            config, [float(x) for x in cfg["gamma_c_t_int_values"]],
            n_trajectories=int(cfg.get("n_trajectories", 8)),
            threads=args.threads)
        outputs.extend(_write_slope_outputs(res, out, "slope"))
        print(f"alpha={res['alpha']:.3f} +- {res['alpha_err']:.3f} "
              f"Q(0)={res['q_intercept']:+.4f}")
    else:
        n_traj = int(cfg.get("n_trajectories", 4))
        records = trajectory.run_ensemble(config, n_traj,
                                          threads=args.threads)
        stats = trajectory.ensemble_statistics(records, config.burn_in)
        for i, rec in enumerate(records):
            prefix = out / f"trajectory_{i:03d}"
            rec.save(str(prefix))
            outputs.append(Path(f"{prefix}.moments.csv"))
            outputs.append(Path(f"{prefix}.emissions.txt"))
        stats_json = out / "ensemble.json"
        stats_json.write_text(json.dumps({
            "n_mean": stats.n_mean, "variance": stats.variance,
            "mandel_q": stats.mandel_q, "n_mean_err": stats.n_mean_err,
            "q_err": stats.q_err, "status": stats.status,
            "n_records": stats.n_records, "span": stats.span},
            indent=2, sort_keys=True) + "\n")
        outputs.append(stats_json)
        outputs.append(figures.plot_moments(records[0], out / "moments.png"))
        print(f"n_mean={stats.n_mean:.4f} Q={stats.mandel_q:+.4f} "
              f"+- {stats.q_err:.4f} [{stats.status}]")
    outputs.append(write_manifest(out, "qts", cfg, outputs, t0, args.seed))
    return 0


def cmd_hbt(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    out = _outdir(args)
    rng = np.random.default_rng(args.seed)
    if args.stream:
        streams = []
        for i, p in enumerate(args.stream):
            times = np.loadtxt(p, ndmin=1, dtype=float)
            span = args.span if args.span is not None else \
                (float(times[-1]) if times.size else 0.0)
            streams.append(hbt.TimestampStream(
                detector_id=f"d{i + 1}", times=times, span=span))
    elif "poisson" in cfg:
        pz = cfg["poisson"]
        streams = [hbt.poisson_stream(pz["rate"], pz["span"], rng)]
    else:
        raise ValueError("hbt needs --stream or a config with a source")
    eff = cfg.get("efficiency", [args.efficiency, args.efficiency])
    if len(streams) == 1:
        s1, s2 = hbt.split_stream(streams[0], eff[0], eff[1], rng)
    else:
        s1, s2 = streams[0], streams[1]
    if args.deadtime > 0:
        s1 = hbt.impose_deadtime(s1, args.deadtime)
        s2 = hbt.impose_deadtime(s2, args.deadtime)
    curve = hbt.correlate(s1, s2, args.bin_width, args.max_lag)
    outputs = []
    ccsv = out / "g2.csv"
    curve.to_csv(ccsv)
    outputs.append(ccsv)
    fit = None
    try:
        fit = hbt.fit_g2(curve, n_mean=cfg.get("n_mean"))
        fjson = out / "g2_fit.json"
        fit.to_json(fjson)
        outputs.append(fjson)
    except hbt.FitError as exc:
        sys.stderr.write(f"fit skipped: {exc}\n")
    outputs.append(figures.plot_g2(curve, fit, out / "g2.png"))
    outputs.append(write_manifest(out, "hbt", cfg, outputs, t0, args.seed))
    if fit is not None:
        msg = f"g2(0)={fit.g2_zero:.4f} tau={fit.tau:.3e}"
        if fit.mandel_q is not None:
            msg += f" Q={fit.mandel_q:+.4f}"
        print(msg)
    else:
        print(f"bins={curve.tau.size} (no fit)")
    return 0


def cmd_calibrate(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    out = _outdir(args)
    raw = np.asarray(calibration.load_raw_points_csv(cfg["raw_csv"]),
                     dtype=float)
    params = _params_from_config(cfg)
    fit = calibration.fit_calibration(raw, params)
    grid = np.geomspace(cfg.get("atom_min", 1.5),
                        cfg.get("atom_max", 1500.0),
                        int(cfg.get("n_points", 220)))
    curve = calibration.predict_io_curve(params, params.distribution(), grid)
    outputs = []
    fjson = out / "calibration.json"
    fit.to_json(fjson)
    outputs.append(fjson)
    ccsv = out / "io_curve.csv"
    curve.to_csv(ccsv)
    outputs.append(ccsv)
    scaled = np.column_stack([raw[:, 0] * fit.scale_atoms,
                              raw[:, 1] * fit.scale_photons])
    outputs.append(figures.plot_io_curve(curve, out / "io_curve.png",
                                         raw_points=scaled))
    outputs.append(write_manifest(out, "calibrate", cfg, outputs, t0,
                                  args.seed))
    print(f"scale_atoms={fit.scale_atoms:.6g} "
          f"scale_photons={fit.scale_photons:.6g} "
          f"residual={fit.residual_norm:.3e}")
    return 0


# ---------------------------------------------------------------------------
# named scans

def _run_fig2a(spec, cfg, out, threads):
    params = MicrolaserParams.for_dimensionless(
        n_ex=cfg.get("n_ex", 8.0), theta=cfg.get("theta", 2.0),
        gamma_c_t_int=0.05)
    gc = params.gamma_c
    base = trajectory.TrajectoryConfig(
        params=params,
        n_max=cfg.get("n_max", 48),
        duration=cfg.get("duration_over_gamma_c", 600.0) / gc,
        burn_in=cfg.get("burn_in_over_gamma_c", 60.0) / gc,
        seed=spec.seed)
    values = cfg.get("gamma_c_t_int_values", [0.02, 0.045, 0.07, 0.095])
    res = trajectory.alpha_slope_scan(
        base, values, n_trajectories=cfg.get("n_trajectories", 4),
        threads=threads)
    return _write_slope_outputs(res, out, "fig2a")


def _run_fig2b(spec, cfg, out, threads):
    n_ex = cfg.get("n_ex", 1000.0)
    curves = []
    outputs = []
    for dv, eta in ((0.0, scans.ETA_NARROW), (0.3, scans.ETA_WIDE)):
        q, bracket = _curve_arrays(extended.bracket_curve(n_ex, dv))
        outputs.append(write_csv(out / f"alpha_dv{int(dv * 100):02d}.csv", {
            "q_qmt": q, "alpha": eta * bracket,
            "alpha_quadratic": eta * q * q}))
        curves.append({"q": q, "alpha": eta * bracket,
                       "quadratic": eta * q * q,
                       "label": f"dv/v0={dv:g}"})
    outputs.append(figures.plot_alpha_curves(curves, out / "fig2b.png"))
    return outputs


def _run_fig3a(spec, cfg, out, threads):
    lo, hi = spec.ranges.get("atom_number", (10.0, 700.0))
    n_pts = spec.resolution.get("atom_number", 70)
    params = baseline_params(v0=cfg.get("v0", 780.0),
                             dv_over_v0=cfg.get("dv_over_v0", 0.3))
    trace = scans.q_vs_n_trace(params, params.distribution(), (lo, hi),
                               n_points=n_pts)
    outputs = [write_csv(out / "trace.csv", {
        "atom_number": trace["atom_number"], "n_mean": trace["n_mean"],
        "q_qmt": trace["q_qmt"], "q0": trace["q0"]})]
    jumps = scans.trace_jumps(trace)
    (out / "jumps.json").write_text(
        json.dumps(jumps, indent=2, sort_keys=True) + "\n")
    outputs.append(out / "jumps.json")
    outputs.append(figures.plot_trace(trace, out / "fig3a.png"))
    return outputs


def _run_fig3b(spec, cfg, out, threads):
    v_rng = spec.ranges.get("v0", (700.0, 2000.0))
    n_rng = spec.ranges.get("atom_number", (50.0, 4500.0))
    params = baseline_params(dv_over_v0=cfg.get("dv_over_v0", 0.3))
    surface = scans.q_surface(
        params, v_rng, n_rng,
        n_v0=spec.resolution.get("v0", 16),
        n_atom=spec.resolution.get("atom_number", 40))
    outputs = [write_csv(out / "valley.csv", surface["valley"])]
    np.savetxt(out / "surface_q0.csv", surface["q0"], delimiter=",",
               fmt="%.12e")
    outputs.append(out / "surface_q0.csv")
    outputs.append(figures.plot_surface(surface, out / "fig3b.png"))
    return outputs


def _run_fig4b(spec, cfg, out, threads):
    lo, hi = spec.ranges.get("atom_number", (1.5, 1500.0))
    n_pts = spec.resolution.get("atom_number", 220)
    params = baseline_params(v0=cfg.get("v0", 762.0),
                             dv_over_v0=cfg.get("dv_over_v0", 0.33))
    curve = calibration.predict_io_curve(
        params, params.distribution(), np.geomspace(lo, hi, n_pts))
    outputs = []
    curve.to_csv(out / "io_curve.csv")
    outputs.append(out / "io_curve.csv")
    (out / "jumps.json").write_text(json.dumps(
        {"jump_locations": list(curve.jump_locations)}, sort_keys=True)
        + "\n")
    outputs.append(out / "jumps.json")
    outputs.append(figures.plot_io_curve(curve, out / "fig4b.png"))
    return outputs


def _run_fig5(spec, cfg, out, threads):
    v_rng = spec.ranges.get("v0", (500.0, 2000.0))
    valley = scans.valley_scan(
        baseline_params(), v_rng,
        n_v0=spec.resolution.get("v0", 24),
        dv_over_v0=cfg.get("dv_over_v0", 0.05))
    cols = {k: valley[k] for k in ("v0", "atom_number", "n_mean", "q0")}
    outputs = [write_csv(out / "valley.csv", cols)]
    outputs.append(figures.plot_valley(valley, out / "fig5.png"))
    return outputs


def _run_custom(spec, cfg, out, threads):
    lo, hi = spec.ranges.get("atom_number", (10.0, 1000.0))
    params = _params_from_config(cfg)
    trace = scans.q_vs_n_trace(
        params, params.distribution(), (lo, hi),
        n_points=spec.resolution.get("atom_number", 60),
        zero_transit=bool(cfg.get("zero_transit", False)))
    outputs = [write_csv(out / "trace.csv", {
        "atom_number": trace["atom_number"], "n_mean": trace["n_mean"],
        "q_qmt": trace["q_qmt"], "q0": trace["q0"]})]
    outputs.append(figures.plot_trace(trace, out / "custom.png"))
    return outputs


_RUNNERS = {"fig2a": _run_fig2a, "fig2b": _run_fig2b, "fig3a": _run_fig3a,
            "fig3b": _run_fig3b, "fig4b": _run_fig4b, "fig5": _run_fig5,
            "custom": _run_custom}


def _scan_spec(cfg: dict, args) -> scans.ScanSpec:
    tag = cfg.get("tag", args.tag)
    if tag is None:
        raise ValueError("scan needs an experiment tag "
                         "(--tag or config key 'tag')")
    return scans.ScanSpec(
        tag=tag,
        ranges={k: tuple(v) for k, v in cfg.get("ranges", {}).items()},
        resolution=dict(cfg.get("resolution", {})),
        seed=int(cfg.get("seed", args.seed)),
        out_dir=args.out)


def cmd_scan(args) -> int:
    t0 = time.monotonic()
    cfg = _load_config(args.config)
    spec = _scan_spec(cfg, args)
    out = _outdir(args)
    outputs = _RUNNERS[spec.tag](spec, cfg, out, args.threads)
    outputs.append(write_manifest(out, f"scan:{spec.tag}", cfg, outputs,
                                  t0, spec.seed))
    print(f"{spec.tag}: wrote {len(outputs)} files to {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="microlaser",
        description="single-atom microlaser statistics toolkit")
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        return p

    common(sub.add_parser("qmt", help="steady state and Q at one point"))
    common(sub.add_parser("alpha", help="finite-transit correction model"))
    common(sub.add_parser("qts", help="trajectory ensemble run"))
    p_hbt = common(sub.add_parser("hbt", help="timestamp correlation"))
    p_hbt.add_argument("--stream", action="append", default=None,
                       help="timestamp file (repeat for two detectors)")
    p_hbt.add_argument("--span", type=float, default=None,
                       help="acquisition span of the streams, s")
    p_hbt.add_argument("--bin-width", type=float, default=1e-7)
    p_hbt.add_argument("--max-lag", type=float, default=1e-5)
    p_hbt.add_argument("--deadtime", type=float, default=0.0)
    p_hbt.add_argument("--efficiency", type=float, default=0.5)
    common(sub.add_parser("calibrate", help="fit atom/photon scales"))
    p_scan = common(sub.add_parser("scan", help="named parameter scans"))
    p_scan.add_argument("--tag", choices=scans.TAGS, default=None)
    return ap


_COMMANDS = {"qmt": cmd_qmt, "alpha": cmd_alpha, "qts": cmd_qts,
             "hbt": cmd_hbt, "calibrate": cmd_calibrate, "scan": cmd_scan}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001  - report as machine-readable
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
