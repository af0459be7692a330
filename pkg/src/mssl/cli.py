"""Command-line frontend: fit, diagnose, simulate, and limits.

Exit codes: 0 on success, 1 for I/O or parse failures, 2 for usage and
domain errors.  The fallback seed comes from the MSSL_SEED environment
variable when --seed is not given.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .asymptotics import AsymptoticSetting, finite_m_limits, interp_limits, ols_limits
from .errors import DataValidationError, MsslError
from .io import read_labeled_csv, read_pool_binary, read_pool_csv
from .links import link_by_name
from .pipelines import fit_glm_pipeline, fit_interp_pipeline, fit_ols_pipeline
from .simulate import (
    ExperimentConfig,
    load_config,
    preset_names,
    run_experiment,
    write_result_csv,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2


def _default_seed() -> int:
    env = os.environ.get("MSSL_SEED")
    return int(env) if env else 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mssl",
        description="Mixed semi-supervised regression toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_fit_args(p):
        p.add_argument("--labeled", required=True, help="labeled CSV, response last")
        p.add_argument("--pool", required=True, help="pool CSV or .bin dump")
        p.add_argument("--model", required=True, choices=["ols", "glm", "interp"])
        p.add_argument("--link", default="identity", choices=["identity", "elu"])
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--grid-size", type=int, default=51)
        p.add_argument("--blocks", type=int, default=200)

    fit = sub.add_parser("fit", help="fit a mixed estimator and print JSON")
    add_fit_args(fit)
    fit.add_argument(
        "--alpha",
        default="auto",
        help="mixing policy: 'auto' (formula), 'grid', or a fixed value in [0,1]",
    )

    diag = sub.add_parser("diagnose", help="print the mixing diagnostics only")
    add_fit_args(diag)

    sim = sub.add_parser("simulate", help="run a Monte Carlo preset")
    sim.add_argument("--preset")
    sim.add_argument("--config", help="key=value sections file with [experiment]")
    sim.add_argument("--list", action="store_true", help="list presets and exit")
    sim.add_argument("--out-dir", default=".")
    sim.add_argument("-k", "--replications", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--sigma2-grid", help="comma-separated values")
    sim.add_argument("--n-grid", help="comma-separated values")
    sim.add_argument("--pool-size", type=int, default=None)
    sim.add_argument("--estimators", help="comma-separated estimator names")
    sim.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    lim = sub.add_parser("limits", help="closed-form asymptotic limits as JSON")
    lim.add_argument("--mode", required=True, choices=["ols", "interp", "finite_m"])
    lim.add_argument("--gamma", type=float, required=True)
    lim.add_argument("--gamma-tilde", type=float, default=0.0)
    lim.add_argument("--sigma2", type=float, default=1.0)
    lim.add_argument("--tau2", type=float, default=1.0)
    lim.add_argument("--c2", type=float, default=1.0)
    return parser


def _read_pool(path: str):
    if str(path).endswith(".bin"):
        return read_pool_binary(path)
    return read_pool_csv(path)


def _cmd_fit(args, diagnose_only: bool) -> int:
    try:
        data = read_labeled_csv(args.labeled)
        pool = _read_pool(args.pool)
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    seed = args.seed if args.seed is not None else _default_seed()
    policy = "auto" if diagnose_only else args.alpha
    if args.model == "ols":
        report = fit_ols_pipeline(
            data, pool, alpha_policy=policy, seed=seed,
            grid_size=args.grid_size, blocks=args.blocks,
        )
    elif args.model == "glm":
        report = fit_glm_pipeline(
            data, pool, link_by_name(args.link), alpha_policy=policy,
            seed=seed, grid_size=args.grid_size, blocks=args.blocks,
        )
    else:
        report = fit_interp_pipeline(
            data, pool, alpha_policy=policy, seed=seed, blocks=args.blocks
        )
    if diagnose_only:
        report = {
            k: report[k]
            for k in ("schema_version", "model", "link", "n", "p", "m", "diagnostics")
        }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.list:
        for name in preset_names():
            print(name)
        return EXIT_OK
    if args.config:
        try:
            cfg = load_config(args.config)
        except DataValidationError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
    elif args.preset:
        if args.preset not in preset_names():
            print(
                f"error: unknown preset {args.preset!r}; available: "
                + ", ".join(preset_names()),
                file=sys.stderr,
            )
            return EXIT_USAGE
        cfg = ExperimentConfig(preset=args.preset)
    else:
        print("error: provide --preset, --config, or --list", file=sys.stderr)
        return EXIT_USAGE

    overrides = {}
    if args.replications is not None:
        overrides["k"] = args.replications
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.sigma2_grid:
        overrides["sigma2_grid"] = tuple(float(v) for v in args.sigma2_grid.split(","))
    if args.n_grid:
        overrides["n_grid"] = tuple(int(v) for v in args.n_grid.split(","))
    if args.pool_size is not None:
        overrides["pool_size"] = args.pool_size
    if args.estimators:
        overrides["estimators"] = tuple(v.strip() for v in args.estimators.split(","))
    if args.threads is not None:
        overrides["threads"] = args.threads
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    result = run_experiment(cfg)
    main_csv, pairs_csv = write_result_csv(result, args.out_dir)
    print(f"preset {result.preset}: {len(result.rows)} rows -> {main_csv}")
    print(f"paired tests: {len(result.paired)} rows -> {pairs_csv}")
    return EXIT_OK


def _cmd_limits(args) -> int:
    if args.mode == "ols":
        rpt = ols_limits(
            AsymptoticSetting(
                gamma=args.gamma, sigma2=args.sigma2, tau2=args.tau2, c2=args.c2
            )
        )
        payload = {
            "eta_inf": rpt.eta_inf,
            "alpha_inf": rpt.alpha_inf,
            "term_limits": rpt.term_limits,
        }
    elif args.mode == "interp":
        rpt = interp_limits(
            AsymptoticSetting(
                gamma=args.gamma, gamma_tilde=args.gamma_tilde,
                sigma2=args.sigma2, tau2=args.tau2, c2=args.c2,
            )
        )
        payload = {
            "eta_inf": rpt.eta_inf,
            "alpha_inf": rpt.alpha_inf,
            "term_limits": rpt.term_limits,
        }
    else:
        payload = {
            "eta_inf": None,
            "alpha_inf": None,
            "term_limits": finite_m_limits(args.gamma, args.gamma_tilde, args.c2),
        }
    payload = {"schema_version": 1, "mode": args.mode, **payload}
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "fit":
            return _cmd_fit(args, diagnose_only=False)
        if args.verb == "diagnose":
            return _cmd_fit(args, diagnose_only=True)
        if args.verb == "simulate":
            return _cmd_simulate(args)
        if args.verb == "limits":
            return _cmd_limits(args)
    except MsslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
