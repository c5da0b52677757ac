"""Command-line front end: calibrate, tier, solve, simulate, frontier.

Every command reads one optional TOML config, applies flag overrides, writes
its artifacts plus the fully resolved config into --out-dir, and exits with
0 on success, 2 on validation/data errors, 3 on I/O errors, 4 on numeric
failures.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio
from .config import RunConfig, load_config
from .errors import (DegenerateInputError, FitConvergenceError, FxmmError,
                     InsufficientDataError, NoDataError, ParseError,
                     SolverNumericsError, UnboundedHamiltonianError,
                     UndefinedLikelihoodError, ValidationError)
from .flow import fit_client_shapes, kmeans_tiers
from .hjb import extract_strategy, internalization_band, solve_hjb
from .simulate import (SimConfig, efficient_frontier, fraction_below_curve,
                       max_expected_pnl, simulate)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_VALIDATION_ERRORS = (ValidationError, NoDataError, ParseError,
                      DegenerateInputError, UndefinedLikelihoodError,
                      InsufficientDataError)
_NUMERIC_ERRORS = (SolverNumericsError, FitConvergenceError,
                   UnboundedHamiltonianError)


def _say(args, *msg):
    if not args.quiet:
        print(*msg)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path):
    dataio.write_json(out / "resolved_config.json", cfg.resolved())


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.simulation.seed = args.seed
        cfg.calibration.seed = args.seed
    if args.paths is not None:
        cfg.simulation.n_paths = args.paths
        cfg.frontier.n_paths = args.paths
    if getattr(args, "trades", None):
        cfg.files.trades = args.trades
    if getattr(args, "quotes", None):
        cfg.files.quotes = args.quotes
    if getattr(args, "strategy", None):
        cfg.files.strategy = args.strategy
    if getattr(args, "tiers", None) is not None:
        cfg.calibration.n_tiers = args.tiers
    return cfg


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    if not cfg.files.trades or not cfg.files.quotes:
        raise ValidationError("calibrate needs files.trades and files.quotes")
    cal = cfg.calibration
    data = dataio.load_flow_data(cfg.files.trades, cfg.files.quotes,
                                 cfg.ladder(), tuple(cal.liquid_hours))
    if data.n_trades == 0:
        raise NoDataError("no trades after filtering")
    if data.n_quotes == 0:
        raise NoDataError("no quotes")
    _say(args, f"loaded {data.n_trades} trades, {data.n_quotes} quotes, "
               f"{len(data.client_ids_present())} clients")
    shapes, failures = fit_client_shapes(data, gtol=cal.gtol,
                                         min_trades=cal.min_trades)
    for cid, why in sorted(failures.items()):
        _say(args, f"  skipped client {cid}: {why}")
    assignment = kmeans_tiers(shapes, cal.n_tiers, data, seed=cal.seed,
                              restarts=cal.restarts, gtol=cal.gtol)
    dataio.write_json(out / "client_fits.json",
                      dataio.client_shapes_to_payload(shapes, failures))
    dataio.write_json(out / "tiers.json",
                      dataio.tiers_to_payload(assignment.tiers,
                                              assignment.membership))
    _echo_config(cfg, out)
    _say(args, f"{'tier':>4} {'alpha':>8} {'beta':>8} {'members':>8}  lambda_by_size")
    for i, tier in enumerate(assignment.tiers, start=1):
        lams = " ".join(f"{l:.1f}" for l in tier.lambda_by_size)
        _say(args, f"{i:>4} {tier.shape.alpha:8.3f} {tier.shape.beta:8.3f} "
                   f"{len(assignment.members(i)):>8}  {lams}")
    return EXIT_OK


def cmd_tier(args) -> int:
    """Re-cluster saved per-client fits into a (possibly different) tier count."""
    cfg = _load(args)
    out = _out_dir(args)
    if not args.fits:
        raise ValidationError("tier needs --fits (client_fits.json from calibrate)")
    if not cfg.files.trades or not cfg.files.quotes:
        raise ValidationError("tier needs files.trades and files.quotes for the refit")
    cal = cfg.calibration
    shapes = dataio.client_shapes_from_payload(dataio.read_json(args.fits))
    data = dataio.load_flow_data(cfg.files.trades, cfg.files.quotes,
                                 cfg.ladder(), tuple(cal.liquid_hours))
    assignment = kmeans_tiers(shapes, cal.n_tiers, data, seed=cal.seed,
                              restarts=cal.restarts, gtol=cal.gtol)
    dataio.write_json(out / "tiers.json",
                      dataio.tiers_to_payload(assignment.tiers,
                                              assignment.membership))
    _echo_config(cfg, out)
    for i, tier in enumerate(assignment.tiers, start=1):
        _say(args, f"tier {i}: alpha={tier.shape.alpha:.3f} beta={tier.shape.beta:.3f} "
                   f"members={len(assignment.members(i))}")
    return EXIT_OK


def _solve_once(cfg: RunConfig, gamma=None):
    params = cfg.to_model_params(gamma)
    s = cfg.solver
    vf, report = solve_hjb(params, dt=s.dt, stationarity_tol=s.stationarity_tol,
                           policy_tol=s.policy_tol,
                           max_policy_iter=s.max_policy_iter)
    return params, vf, report


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    gamma = args.gamma[0] if args.gamma else None
    params, vf, report = _solve_once(cfg, gamma)
    table = extract_strategy(vf, params)
    band = internalization_band(vf, params)
    dataio.write_strategy_csv(out / "strategy.csv", table)
    payload = report.to_dict()
    payload.update({"gamma": params.gamma, "band_meur": list(band),
                    "grid_points": params.grid_points})
    dataio.write_json(out / "solver_report.json", payload)
    _echo_config(cfg, out)
    mid = int(np.argmin(np.abs(table.q_grid)))
    for n in range(table.n_tiers):
        spread = table.bid[n, 0, mid] + table.ask[n, 0, mid]
        _say(args, f"tier {n + 1}: inventory-neutral top-of-book spread "
                   f"{spread:.4f} bps")
    _say(args, f"internalization band [{band[0]:g}, {band[1]:g}] MEUR, "
               f"solved in {report.wall_time_s:.1f}s "
               f"({report.n_steps} steps, stationary={report.stationary})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    sim = cfg.simulation
    gammas = args.gamma if args.gamma else [None]
    records = []
    for gamma in gammas:
        if cfg.files.strategy and gamma is None:
            params = cfg.to_model_params()
            table = dataio.read_strategy_csv(cfg.files.strategy)
            _say(args, f"loaded strategy from {cfg.files.strategy}")
        else:
            params, vf, _ = _solve_once(cfg, gamma)
            table = extract_strategy(vf, params)
            _say(args, f"solved gamma={params.gamma:g}")
        config = SimConfig(
            params=params, strategy=table, horizon_days=sim.horizon_days,
            step_days=sim.step_days, n_paths=sim.n_paths, seed=sim.seed,
            record_step_days=sim.record_step_days,
            burn_in_fraction=sim.burn_in_fraction, event_log=sim.event_log)
        t0 = time.perf_counter()
        result = simulate(config)
        rec, metrics = result[0], result[1]
        payload = dataio.metrics_to_payload(metrics)
        records.append(payload)
        if sim.event_log:
            dataio.write_event_log_csv(out / f"events_gamma{params.gamma:g}.csv",
                                       result[2])
        _say(args, f"gamma={params.gamma:g}: mean_pnl={payload['mean_pnl']:.1f} "
                   f"std={payload['std_pnl']:.1f} "
                   f"client_share={payload['client_share']:.3f} "
                   f"tau_R={payload['tau_R_minutes']} "
                   f"({time.perf_counter() - t0:.1f}s, {sim.n_paths} paths)")
    dataio.write_json(out / "metrics.json",
                      records[0] if len(records) == 1 else {"runs": records})
    _echo_config(cfg, out)
    return EXIT_OK


def cmd_frontier(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    fr = cfg.frontier
    gammas = args.gamma if args.gamma else fr.gammas
    params = cfg.to_model_params()
    result = efficient_frontier(
        params, gammas, n_perturbations=fr.n_perturbations,
        n_paths=fr.n_paths, horizon_days=fr.horizon_days,
        step_days=cfg.simulation.step_days, seed=cfg.simulation.seed,
        quote_shift_bps=fr.quote_shift_bps,
        scale_range=(fr.scale_low, fr.scale_high), dt=cfg.solver.dt,
        progress=None if args.quiet else print)
    dataio.write_frontier_csv(out / "frontier.csv", result)
    report = {"ceiling_pnl": result.ceiling, "gammas": list(gammas),
              "n_perturbations": fr.n_perturbations, "n_paths": fr.n_paths}
    if fr.n_perturbations > 0 and len(gammas) > 1:
        report["fraction_below_curve"] = fraction_below_curve(result)
    dataio.write_json(out / "frontier_report.json", report)
    _echo_config(cfg, out)
    _say(args, f"frontier: {len(result.rows)} rows, ceiling {result.ceiling:.1f}, "
               + (f"{report['fraction_below_curve']:.0%} of perturbed points "
                  f"below the optimal curve" if "fraction_below_curve" in report
                  else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fxmm",
        description="FX dealer market making: flow calibration, optimal "
                    "pricing/hedging, Monte Carlo evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML configuration file")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None,
                       help="override simulation path count")
        p.add_argument("--gamma", type=float, action="append", default=None,
                       help="risk aversion override; repeat for a sweep")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("calibrate", help="fit client intensities and build tiers")
    common(p)
    p.add_argument("--trades", default=None, help="trades CSV")
    p.add_argument("--quotes", default=None, help="quotes CSV")
    p.add_argument("--tiers", type=int, default=None, help="number of tiers")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("tier", help="re-cluster saved per-client fits")
    common(p)
    p.add_argument("--fits", default=None, help="client_fits.json from calibrate")
    p.add_argument("--trades", default=None)
    p.add_argument("--quotes", default=None)
    p.add_argument("--tiers", type=int, default=None)
    p.set_defaults(func=cmd_tier)

    p = sub.add_parser("solve", help="solve for the optimal strategy table")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo run of the optimal strategy")
    common(p)
    p.add_argument("--strategy", default=None, help="pre-solved strategy CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("frontier", help="risk/reward frontier over gamma")
    common(p)
    p.set_defaults(func=cmd_frontier)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FxmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
