"""Command-line interface.

Subcommands mirror the library pipeline: trim / trim-grid for equilibria,
gains / schedule for controller synthesis, propagate for raw ensemble
snapshots, wasserstein for scoring snapshot files, freq for the
disturbance-to-state response, and scenario for the full experiment
runner. Angle-valued inputs and outputs are degrees.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import controller, harness, trim
from .f16 import DEG, AeroTables, AircraftParams
from .harness import ConfigError, NumericalFailure, ScenarioConfig
from .liouville import PropagationError, UnresolvableQueryError
from .transport import (BudgetExceededError, DiscreteDistribution,
                        MassBalanceError, wasserstein_lp)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_params_tables(args):
    params = AircraftParams.from_json(args.params) if args.params else AircraftParams()
    tables = AeroTables.from_json(args.tables) if args.tables else AeroTables.default()
    return params, tables


def _cmd_trim(args) -> int:
    params, tables = _load_params_tables(args)
    tp = trim.find_trim(args.V, args.alpha_deg * DEG, params, tables)
    json.dump(tp.to_dict(), sys.stdout, indent=1)
    print()
    return EXIT_OK


def _cmd_trim_grid(args) -> int:
    params, tables = _load_params_tables(args)
    grid = trim.default_grid(args.nv, args.nalpha)
    points = trim.trim_grid(grid, params, tables)
    doc = [tp.to_dict() for tp in points]
    with open(args.out, "w") as f:
        json.dump(doc, f, indent=1)
    n_conv = sum(tp.converged for tp in points)
    print(f"wrote {len(points)} trim points ({n_conv} converged) to {args.out}")
    return EXIT_OK


def _cmd_gains(args) -> int:
    params, tables = _load_params_tables(args)
    tp = trim.find_trim(args.V, args.alpha_deg * DEG, params, tables)
    model = controller.linearize_plant(tp.x_trim, tp.u_trim, params, tables)
    K = controller.lqr_gain(model, controller.LqrWeights())
    acl = controller.spectral_abscissa(model.A - model.B @ K)
    json.dump({
        "trim": tp.to_dict(),
        "K": K.tolist(),
        "K_units": "thrust lb and elevator rad per (rad, ft/s, rad, rad/s) deviation",
        "closed_loop_abscissa": acl,
        "open_loop_abscissa": controller.spectral_abscissa(model.A),
    }, sys.stdout, indent=1)
    print()
    return EXIT_OK


def _cmd_schedule(args) -> int:
    params, tables = _load_params_tables(args)
    with open(args.trims) as f:
        doc = json.load(f)
    points = [trim.TrimPoint.from_dict(d) for d in doc]
    reference = trim.find_trim(harness.NOMINAL_V, harness.NOMINAL_ALPHA_DEG * DEG,
                               params, tables)
    sched = controller.build_schedule(points, controller.LqrWeights(),
                                      params, tables, reference=reference)
    with open(args.out, "w") as f:
        json.dump(sched.to_dict(), f, indent=1)
    n_unstable = int(np.count_nonzero(sched.abscissa_open > 0))
    print(f"wrote {sched.n_nodes}-node schedule to {args.out} "
          f"({n_unstable} open-loop unstable nodes, all closed loops stable)")
    return EXIT_OK


def _scenario_config_from_args(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_json(args.scenario)
    overrides = {}
    for field in ("t_f", "dt", "samples", "emit_every", "seed", "workers"):
        v = getattr(args, field, None)
        if v is not None:
            overrides[field] = v
    if getattr(args, "controller", None):
        overrides["controller"] = args.controller
    if getattr(args, "strict_rk4", False):
        overrides["strict_rk4"] = True
    doc = cfg.to_dict()
    doc.update(overrides)
    return ScenarioConfig(**doc)


def _cmd_propagate(args) -> int:
    cfg = _scenario_config_from_args(args)
    params, tables = _load_params_tables(args)
    setup = harness.build_controllers(params, tables,
                                      need_schedule="gslqr" in cfg.controllers)
    x_trim = setup.trim.x_trim.as_array()
    if cfg.kind == "param":
        delta = cfg.param_delta_percent[0] if cfg.param_delta_percent else 0.0
        cloud = harness._param_cloud(cfg, float(delta),
                                     x_trim + harness._x_pert_internal(cfg), params)
    else:
        cloud = harness.initial_cloud(cfg, x_trim)

    from .f16 import ClosedLoop, SineDisturbance
    out_dir = Path(args.out)
    for name in cfg.controllers:
        disturbance = None
        if cfg.kind == "disturbance":
            omega = cfg.omega_rad_s[0] if cfg.omega_rad_s else 0.0
            disturbance = SineDisturbance(cfg.disturbance_amp_deg * DEG, float(omega))
        loop = ClosedLoop(law=setup.law(name), params=params, tables=tables,
                          disturbance=disturbance)
        snaps = harness.propagate(cloud, loop.state_rhs, cfg.t_f, cfg.dt,
                                  cfg.emit_every, cfg.strict_rk4, cfg.workers)
        if args.per_time:
            for s in snaps:
                harness.write_snapshot_csv([s], out_dir / f"{name}_t{s.t:07.2f}.csv")
        else:
            harness.write_snapshot_csv(snaps, out_dir / f"{name}.csv")
        print(f"{name}: {len(snaps)} snapshots, "
              f"{int(np.count_nonzero(snaps[-1].diverged))} diverged samples")
    return EXIT_OK


def _dist_from_snapshot(snap, weights: str) -> DiscreteDistribution:
    deg_states = snap.states * harness.PAPER_STATE_SCALE
    if snap.params.shape[1]:
        pts = np.concatenate([deg_states, snap.params], axis=1)
    else:
        pts = deg_states
    if weights == "density":
        w = snap.phi / snap.phi.sum()
    else:
        w = snap.gamma
    return DiscreteDistribution(pts, w)


def _cmd_wasserstein(args) -> int:
    snaps_a = harness.read_snapshot_csv(args.a)
    rows = []
    plan_export = None
    if args.dirac_at:
        with open(args.dirac_at) as f:
            tp = trim.TrimPoint.from_dict(json.load(f))
        x_ref = tp.x_trim.as_array()
        for s in snaps_a:
            w = (s.phi / s.phi.sum()) if args.weights == "density" else s.gamma
            d2 = np.sum(((s.states - x_ref) * harness.PAPER_STATE_SCALE) ** 2, axis=1)
            rows.append((s.t, float(np.sqrt(np.dot(w, d2)))))
    else:
        snaps_b = harness.read_snapshot_csv(args.b)
        if len(snaps_a) != len(snaps_b):
            raise ConfigError("snapshot files carry different emit schedules")
        for sa, sb in zip(snaps_a, snaps_b):
            plan = wasserstein_lp(_dist_from_snapshot(sa, args.weights),
                                  _dist_from_snapshot(sb, args.weights))
            rows.append((sa.t, plan.W))
            plan_export = plan
    out = open(args.out, "w") if args.out else sys.stdout
    out.write("t,W\n")
    for t, W in rows:
        out.write(f"{t},{W}\n")
    if args.out:
        out.close()
    if args.plan and plan_export is not None:
        with open(args.plan, "w") as f:
            f.write("i,j,mass\n")
            for i, j, mu in zip(plan_export.rows, plan_export.cols, plan_export.flows):
                f.write(f"{i},{j},{mu}\n")
    return EXIT_OK


def _cmd_freq(args) -> int:
    params, tables = _load_params_tables(args)
    setup = harness.build_controllers(params, tables, need_schedule=False)
    model = setup.closed_loop_linear_model("deg")
    grid = harness.default_omega_grid(args.points)
    gains_db, peak = harness.freq_response(model, grid)
    out = open(args.out, "w") if args.out else sys.stdout
    out.write("omega_rad_s,gain_db\n")
    for w, g in zip(grid, gains_db):
        out.write(f"{w},{g}\n")
    if args.out:
        out.close()
    print(f"peak gain at omega = {peak:.4f} rad/s", file=sys.stderr)
    return EXIT_OK


def _cmd_scenario(args) -> int:
    cfg = ScenarioConfig.from_json(args.config)
    if args.out:
        doc = cfg.to_dict()
        doc["output_dir"] = args.out
        cfg = ScenarioConfig(**doc)
    if cfg.output_dir is None:
        raise ConfigError("no output directory: set output_dir in the config or pass --out")
    report = harness.run_scenario(cfg, keep_snapshots=True)
    print(f"report written to {cfg.output_dir} (hash {report.content_hash[:12]})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otrobust",
                                 description="Controller robustness via density transport")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_model_args(p):
        p.add_argument("--params", help="aircraft parameter JSON (defaults built in)")
        p.add_argument("--tables", help="aero table JSON (defaults to shipped tables)")

    p = sub.add_parser("trim", help="trim at one flight condition")
    p.add_argument("--V", type=float, required=True, help="velocity, ft/s")
    p.add_argument("--alpha-deg", type=float, required=True, dest="alpha_deg")
    add_model_args(p)
    p.set_defaults(func=_cmd_trim)

    p = sub.add_parser("trim-grid", help="trim the scheduling lattice")
    p.add_argument("--nv", type=int, default=10)
    p.add_argument("--nalpha", type=int, default=10)
    p.add_argument("--out", required=True)
    add_model_args(p)
    p.set_defaults(func=_cmd_trim_grid)

    p = sub.add_parser("gains", help="LQR gain at a flight condition")
    p.add_argument("--V", type=float, default=harness.NOMINAL_V)
    p.add_argument("--alpha-deg", type=float, default=harness.NOMINAL_ALPHA_DEG,
                   dest="alpha_deg")
    add_model_args(p)
    p.set_defaults(func=_cmd_gains)

    p = sub.add_parser("schedule", help="build gain schedule from trim-grid JSON")
    p.add_argument("--trims", required=True)
    p.add_argument("--out", required=True)
    add_model_args(p)
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("propagate", help="propagate an ensemble, write snapshots")
    p.add_argument("--scenario", required=True, help="scenario config JSON")
    p.add_argument("--controller", choices=["lqr", "gslqr", "both"])
    p.add_argument("--tf", type=float, dest="t_f")
    p.add_argument("--dt", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--emit-every", type=int, dest="emit_every")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--strict-rk4", action="store_true", dest="strict_rk4")
    p.add_argument("--per-time", action="store_true",
                   help="one CSV per emitted time instead of one long file")
    p.add_argument("--out", required=True, help="output directory")
    add_model_args(p)
    p.set_defaults(func=_cmd_propagate)

    p = sub.add_parser("wasserstein", help="score snapshot CSVs")
    p.add_argument("--a", required=True, help="snapshot CSV")
    p.add_argument("--b", help="second snapshot CSV (transportation LP)")
    p.add_argument("--dirac-at", dest="dirac_at",
                   help="trim JSON: closed-form distance to the trim point")
    p.add_argument("--weights", choices=["density", "mass"], default="density",
                   help="marginal weights: normalized carried densities or transport masses")
    p.add_argument("--plan", help="write the final optimal plan as triplet CSV")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=_cmd_wasserstein)

    p = sub.add_parser("freq", help="closed-loop disturbance-to-state response")
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out")
    add_model_args(p)
    p.set_defaults(func=_cmd_freq)

    p = sub.add_parser("scenario", help="run a full experiment from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config)")
    p.set_defaults(func=_cmd_scenario)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MassBalanceError, BudgetExceededError, ValueError,
            OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, PropagationError, UnresolvableQueryError,
            controller.SynthesisError, controller.LinearizationError,
            np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
