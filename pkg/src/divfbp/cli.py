"""Command line front end.

Every subcommand reads a JSON config (``--config``; built-in defaults when
omitted), applies ``--set block.key=value`` overrides and writes its artifacts
to ``<output_dir>/<subcommand>/``. Exit status: 0 success, 1 audit failure,
2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .boundary import AllStopped, NonMonotoneInput, UnboundedBoundaryRow
from .config import OUTPUT_DIR_ENV, ArtifactWriter, ConfigError, RunConfig, build_config, load_config
from .dividend import OutOfGridCurve, hjb_audit, smooth_fit_audit
from .fbp import GridTooWide, MissingFullInfo, NonMonotoneScheme, NotConverged
from .full_info import BracketingFailure
from .mc import martingale_diagnostic, simulate_dividend_strategy, eval_stopping_value, sup_tail_oracle
from .params import DomainError, ParamsError, validate
from . import pipeline

EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

NUMERICAL_ERRORS = (NotConverged, GridTooWide, NonMonotoneScheme, MissingFullInfo, UnboundedBoundaryRow,
                    AllStopped, NonMonotoneInput, OutOfGridCurve, BracketingFailure, DomainError,
                    FloatingPointError)

log = logging.getLogger("divfbp")


def cmd_validate(cfg: RunConfig, writer: ArtifactWriter) -> int:
    tag = validate(pipeline.params_of(cfg["params"]))
    print(tag.value)
    writer.json("validate.json", {"case": tag.value, "params": cfg["params"]})
    return EXIT_OK


def cmd_full_info(cfg, writer) -> int:
    params = pipeline.params_of(cfg["params"])
    validate(params)
    fi = pipeline.full_info_of(params, cfg)
    writer.json("full_info.json", {"a_star": fi.a_star, "r_plus": fi.r_plus, "r_minus": fi.r_minus})
    writer.csv("full_info_curve.csv", {"x": fi.x, "U": fi.curve})
    print(f"a_star = {fi.a_star:.12g}")
    return EXIT_OK


def cmd_solve(cfg, writer) -> int:
    run = pipeline.solve_case(pipeline.params_of(cfg["params"]), cfg)
    s = run.surface
    writer.csv("surface.csv", pipeline.surface_columns(s))
    writer.csv("residual.csv", pipeline.residual_columns(s))
    writer.json("solve.json", {"case": run.tag.value, "iterations": s.iterations, "residual": s.final_residual,
                               "nx": s.grid.shape[0], "ny": s.grid.shape[1], "hx": s.grid.hx,
                               "hy": s.grid.hy, "wall_time": run.timings["solve"]})
    print(f"solved {s.grid.shape[0]}x{s.grid.shape[1]} in {s.iterations} sweeps, residual {s.final_residual:.3e}")
    return EXIT_OK


def cmd_boundary(cfg, writer) -> int:
    run = pipeline.solve_case(pipeline.params_of(cfg["params"]), cfg)
    for name, cols in pipeline.boundary_tables(run, cfg).items():
        writer.csv(name, cols)
    summary = pipeline.boundary_summary(run)
    writer.json("boundary.json", summary)
    print(f"y_star_0 = {summary['y_star_0']:.6g}, max b - a_star = {summary['a_star_gap']:.3e}")
    return EXIT_OK


def cmd_assemble(cfg, writer) -> int:
    run = pipeline.solve_case(pipeline.params_of(cfg["params"]), cfg, keep_coarse=True)
    sol = pipeline.assemble_case(run, cfg)
    writer.csv("v_surface.csv", pipeline.dividend_columns(sol))
    report = hjb_audit(sol, run.boundary, run.params, pipeline.hjb_budget(run, cfg))
    writer.json("hjb_report.json", report)
    writer.json("smooth_fit.json", smooth_fit_audit(run.surface, run.boundary,
                                                    pipeline.creation_window(run.params, cfg)))
    print(f"V assembled on {sol.x.size}x{sol.pi.size}; closed-form pass fraction "
          f"{report['closed_form_pass_fraction']:.4f}")
    return EXIT_OK


def _mc_summary(est, runtime: float, **extra) -> dict:
    return {"mean": est.mean, "std_error": est.std_error, "n_paths": est.n_effective,
            "truncation_fraction": est.truncation_fraction, "runtime": runtime, **extra}


def cmd_simulate_stopping(cfg, writer) -> int:
    run = pipeline.solve_case(pipeline.params_of(cfg["params"]), cfg)
    sim = cfg["simulate"]
    start = time.perf_counter()
    est = eval_stopping_value(sim["x0"], sim["phi0"], run.boundary, run.params, pipeline.mc_config(cfg))
    writer.json("simulate_stopping.json", _mc_summary(est, time.perf_counter() - start,
                                                      x0=sim["x0"], phi0=sim["phi0"]))
    print(f"stopping value {est.mean:.6f} +/- {est.std_error:.2e}")
    return EXIT_OK


def cmd_simulate_dividend(cfg, writer) -> int:
    run = pipeline.solve_case(pipeline.params_of(cfg["params"]), cfg)
    sim, dm = cfg["simulate"], cfg["dividend_mc"]
    mcc = pipeline.mc_config(cfg, n_paths=dm["n_paths"], dt=dm["dt"], horizon=dm["horizon"])
    start = time.perf_counter()
    est, band = simulate_dividend_strategy(sim["x0"], sim["pi0"], run.boundary, run.params, mcc, with_band=True)
    writer.json("simulate_dividend.json", _mc_summary(est, time.perf_counter() - start, x0=sim["x0"],
                                                      pi0=sim["pi0"], max_overshoot=band))
    print(f"dividend value {est.mean:.6f} +/- {est.std_error:.2e}")
    return EXIT_OK


def cmd_mc_diagnostics(cfg, writer) -> int:
    run = pipeline.solve_case(pipeline.params_of(cfg["params"]), cfg)
    sim = cfg["simulate"]
    mcc = pipeline.mc_config(cfg)
    start = time.perf_counter()
    diag = martingale_diagnostic(sim["x0"], sim["phi0"], run.boundary, run.params, mcc,
                                 sim["checkpoints"], surface=run.surface)
    rows = diag["rows"]
    writer.csv("checkpoints.csv", {k: [r[k] for r in rows] for k in rows[0]})
    horizon = 50.0 * run.params.sigma ** 2 / sim["tail_beta"]
    tail = sup_tail_oracle(sim["tail_beta"], run.params,
                           mcc.replace(dt=sim["tail_dt"], horizon=horizon), horizon=horizon)
    writer.csv("tail.csv", {"x": tail["x"], "empirical_survival": tail["empirical_survival"],
                            "exact_survival": tail["exact_survival"]})
    last = rows[-1]
    writer.json("mc_diagnostics.json", {
        "mean": last["stopped_mean"], "std_error": last["stopped_se"], "n_paths": mcc.n_paths,
        "truncation_fraction": 0.0, "runtime": time.perf_counter() - start,
        "stopped_gap": last["stopped_gap"], "free_mean": last["free_mean"],
        "tail_max_deviation": tail["max_deviation"]})
    print(f"stopped process drift {last['stopped_gap']:.3e}, tail deviation {tail['max_deviation']:.4f}")
    return EXIT_OK


def cmd_verify(cfg, writer) -> int:
    from .verify import run_verify
    results = run_verify(cfg, writer)
    for r in results:
        print(f"criterion {r['criterion']:2d} {'PASS' if r['pass'] else 'FAIL'}  {r['name']}")
    return EXIT_OK if all(r["pass"] for r in results) else EXIT_AUDIT


COMMANDS = {
    "validate": cmd_validate,
    "full-info": cmd_full_info,
    "solve": cmd_solve,
    "boundary": cmd_boundary,
    "assemble": cmd_assemble,
    "simulate-stopping": cmd_simulate_stopping,
    "simulate-dividend": cmd_simulate_dividend,
    "mc-diagnostics": cmd_mc_diagnostics,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="divfbp", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", "-c", help="JSON config file; defaults are used when omitted")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set grid.nx=200 (repeatable)")
    parser.add_argument("--output-dir", "-o", help=f"artifact root; beats ${OUTPUT_DIR_ENV} and the config entry")
    parser.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    overrides = list(args.overrides)
    try:
        cfg = load_config(args.config, overrides) if args.config else build_config(None, overrides)
        validate(pipeline.params_of(cfg["params"]))
    except (ConfigError, ParamsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    # precedence: --output-dir, then the environment variable, then the config entry
    out_dir = Path(args.output_dir) if args.output_dir else cfg.output_dir
    writer = ArtifactWriter(out_dir / args.command, cfg.sha256)
    try:
        status = COMMANDS[args.command](cfg, writer)
    except ParamsError as exc:
        writer.abort()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        writer.abort()
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BaseException:
        writer.abort()
        raise
    writer.json("manifest.json", {"command": args.command, "files": writer.manifest()})
    writer.commit()
    return status


if __name__ == "__main__":
    sys.exit(main())
