"""``vioflight`` command line.

Subcommands::

    vioflight eval GT EST        ATE/RPE of an estimate against ground truth
    vioflight shape IN OUT       slow a trajectory down to respect VIO limits
    vioflight simulate           closed-loop flight(s) with synthetic VIO
    vioflight camgeo             footprint overlap / pixel motion sweep

Exit codes: 0 success, 1 input or validation error, 2 shaping did not
converge or the simulated estimator failed (landing).
"""

import argparse
import dataclasses
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor

from vioflight import camgeo as cg
from vioflight.alignment import DegenerateGeometryError, apply_alignment
from vioflight.config import ConfigError, dump_resolved, load_config
from vioflight.metrics import MetricError, evaluate
from vioflight.shaping import MotionConstraints, shape_trajectory
from vioflight.simulation import run_closed_loop
from vioflight.trajectory import TrajectoryError, read_trajectory, serialize_trajectory, write_trajectory

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILURE = 2


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _eval_options(cfg, args):
    opts = cfg.eval
    overrides = {}
    if args.align is not None:
        overrides["align"] = args.align
    if args.delta is not None:
        overrides["delta"] = args.delta
    if args.lateral_only is not None:
        overrides["lateral_only"] = args.lateral_only
    if getattr(args, "max_dt", None) is not None:
        overrides["max_dt"] = args.max_dt
    return dataclasses.replace(opts, **overrides)


def cmd_eval(args):
    cfg = load_config(args.config)
    opts = _eval_options(cfg, args)
    gt = read_trajectory(args.gt)
    est = read_trajectory(args.est)
    report = evaluate(gt, est, opts.align, opts.delta, opts.lateral_only, opts.max_dt)
    sys.stdout.write(report.to_csv())
    if args.per_sample:
        _write(args.per_sample, report.per_sample_csv())
    if args.plot:
        from vioflight.plotting import eval_figure

        eval_figure(gt, apply_alignment(report.alignment, est), report, args.plot)
    return EXIT_OK


def cmd_shape(args):
    cfg = load_config(args.config)
    c = cfg.shape.constraints
    c = MotionConstraints(
        v_max=args.v_max if args.v_max is not None else c.v_max,
        a_max=args.a_max if args.a_max is not None else c.a_max,
        sample_period=args.sample_period if args.sample_period is not None else c.sample_period,
    )
    max_iter = args.max_iter if args.max_iter is not None else cfg.shape.max_iter
    traj = read_trajectory(args.input)
    shaped, report = shape_trajectory(traj, c, max_iter)
    write_trajectory(args.output, shaped)
    row = report.as_row()
    text = ",".join(row) + "\n" + ",".join(repr(v) if isinstance(v, float) else str(v) for v in row.values()) + "\n"
    sys.stdout.write(text)
    if args.report:
        _write(args.report, text)
    if args.plot:
        from vioflight.plotting import shaping_figure

        shaping_figure(traj, shaped, c, args.plot)
    return EXIT_OK if report.converged else EXIT_FAILURE


def _run_one(sim_cfg, eval_opts, run_dir, config_path, plot):
    """Fly one scenario and write its run directory; returns a summary row."""
    os.makedirs(run_dir, exist_ok=True)
    log = run_closed_loop(sim_cfg)
    truth = log.truth_trajectory()
    estimate = log.estimate_trajectory()
    report = evaluate(truth, estimate, eval_opts.align, eval_opts.delta, eval_opts.lateral_only, eval_opts.max_dt)
    full = evaluate(truth, estimate, eval_opts.align, eval_opts.delta, False, eval_opts.max_dt)

    if config_path:
        shutil.copyfile(config_path, os.path.join(run_dir, "config.toml"))
    _write(os.path.join(run_dir, "resolved_config.json"), dump_resolved(sim_cfg))
    _write(os.path.join(run_dir, "reference.tum"), serialize_trajectory(log.reference))
    _write(os.path.join(run_dir, "truth.tum"), serialize_trajectory(truth))
    _write(os.path.join(run_dir, "estimate.tum"), serialize_trajectory(estimate))
    _write(os.path.join(run_dir, "events.csv"), log.events_csv())
    _write(os.path.join(run_dir, "commands.csv"), log.commands_csv())
    _write(os.path.join(run_dir, "vio.csv"), log.vio_csv())
    _write(os.path.join(run_dir, "metrics.csv"), report.to_csv())
    _write(os.path.join(run_dir, "per_sample.csv"), report.per_sample_csv())
    if plot:
        from vioflight.plotting import flight_figure

        flight_figure(log, report, os.path.join(run_dir, "flight.png"))
    return {
        "run": os.path.basename(run_dir),
        "camera_orientation": sim_cfg.camera_orientation,
        "velocity": sim_cfg.reference.velocity,
        "ate": report.ate,
        "rpe": report.rpe,
        "ate_3d": full.ate,
        "rpe_3d": full.rpe,
        "landings": len(log.landing_events),
    }


SUMMARY_HEADER = ("run", "camera_orientation", "velocity", "ate", "rpe", "ate_3d", "rpe_3d", "landings")


def _summary_csv(rows):
    lines = [",".join(SUMMARY_HEADER)]
    for r in rows:
        lines.append(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k]) for k in SUMMARY_HEADER))
    return "\n".join(lines) + "\n"


def cmd_simulate(args):
    cfg = load_config(args.config)
    sim = cfg.simulate
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    eval_opts = _eval_options(cfg, args)
    out = args.out
    jobs = []
    if args.grid:
        for orientation in cfg.grid.orientations:
            for velocity in cfg.grid.velocities:
                cell = dataclasses.replace(
                    sim,
                    camera_orientation=orientation,
                    reference=dataclasses.replace(sim.reference, velocity=float(velocity)),
                )
                jobs.append((cell, os.path.join(out, f"o{orientation:02d}_v{float(velocity):g}")))
    else:
        jobs.append((sim, os.path.join(out, args.name)))

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, c, eval_opts, d, args.config, args.plot) for c, d in jobs]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_one(c, eval_opts, d, args.config, args.plot) for c, d in jobs]

    os.makedirs(out, exist_ok=True)
    summary = _summary_csv(rows)
    _write(os.path.join(out, "summary.csv"), summary)
    sys.stdout.write(summary)
    return EXIT_FAILURE if any(r["landings"] for r in rows) else EXIT_OK


def cmd_camgeo(args):
    cfg = load_config(args.config)
    o = cfg.camgeo
    rows = cg.sweep(
        pitches=args.pitch if args.pitch is not None else o.pitch,
        fps_values=args.fps if args.fps is not None else o.fps,
        velocities=args.velocity if args.velocity is not None else o.velocity,
        altitude=args.altitude if args.altitude is not None else o.altitude,
        yaw_rate=args.yaw_rate if args.yaw_rate is not None else o.yaw_rate,
        hfov=args.hfov if args.hfov is not None else o.hfov,
        vfov=args.vfov if args.vfov is not None else o.vfov,
        width=args.width if args.width is not None else o.width,
        height=args.height if args.height is not None else o.height,
    )
    text = cg.sweep_csv(rows)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    if args.plot:
        from vioflight.plotting import camgeo_figure

        camgeo_figure(rows, args.plot)
    return EXIT_OK


def _add_eval_flags(p):
    p.add_argument("--align", choices=["rigid", "sim3", "similarity", "yaw2d"], default=None)
    p.add_argument("--delta", type=float, default=None, help="RPE interval in seconds (default 1.0)")
    lat = p.add_mutually_exclusive_group()
    lat.add_argument("--lateral-only", dest="lateral_only", action="store_true", default=None,
                     help="drop the z error component (default)")
    lat.add_argument("--no-lateral-only", dest="lateral_only", action="store_false")


def build_parser():
    parser = argparse.ArgumentParser(prog="vioflight", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", default=None, help="TOML configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="ATE/RPE between two TUM trajectories")
    p.add_argument("gt")
    p.add_argument("est")
    _add_eval_flags(p)
    p.add_argument("--max-dt", type=float, default=None, help="association tolerance in seconds")
    p.add_argument("--per-sample", default=None, metavar="CSV")
    p.add_argument("--plot", default=None, metavar="PNG")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("shape", help="shape a TUM trajectory under motion constraints")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--a-max", type=float, default=None)
    p.add_argument("--v-max", type=float, default=None)
    p.add_argument("--sample-period", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--report", default=None, metavar="CSV")
    p.add_argument("--plot", default=None, metavar="PNG")
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("simulate", help="closed-loop simulation with synthetic VIO")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="runs")
    p.add_argument("--name", default="run")
    p.add_argument("--grid", action="store_true", help="sweep the configured orientation x velocity grid")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--plot", action="store_true", help="also render flight.png per run")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("camgeo", help="camera footprint / pixel motion sweep")
    p.add_argument("--pitch", type=float, nargs="+", default=None)
    p.add_argument("--fps", type=float, nargs="+", default=None)
    p.add_argument("--velocity", type=float, nargs="+", default=None)
    p.add_argument("--altitude", type=float, default=None)
    p.add_argument("--yaw-rate", type=float, default=None)
    p.add_argument("--hfov", type=float, default=None)
    p.add_argument("--vfov", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--out", default=None, metavar="CSV")
    p.add_argument("--plot", default=None, metavar="PNG")
    p.set_defaults(func=cmd_camgeo)

    # allow --config after the subcommand as well
    for name, sp in sub.choices.items():
        sp.add_argument("--config", default=argparse.SUPPRESS, help="TOML configuration file")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TrajectoryError, MetricError, DegenerateGeometryError, cg.OpenFootprintError,
            ValueError, OSError) as exc:
        print(f"vioflight {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
