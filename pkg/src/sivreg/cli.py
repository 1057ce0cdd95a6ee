"""Command-line interface: estimate, locus, simulate, benchmark.

All randomness is controlled by --seed (env override SIVREG_SEED); thread
caps come from --threads (env SIVREG_THREADS). Library errors map to stable
nonzero exit codes:

    1 unexpected error          8 no endogeneity detected
    2 usage / bad arguments     9 ambiguous sign
    3 input file not found     10 empty delta grid
    4 CSV parse error          11 all bootstrap replications failed
    5 too few complete rows    12 degenerate variance
    6 rank-deficient design    13 non-positive FGLS variance
    7 degenerate direction     14 under-identified 2SLS
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .data import ingest_csv
from .estimate import ModelSpec, bootstrap, estimate, estimate_to_json
from .exceptions import SivError
from .robust import robust_criterion
from .search import GridConfig, build_context, determine_sign
from .simulate import DgpConfig, generate_population, run_monte_carlo

EXIT_USAGE = 2
EXIT_NOT_FOUND = 3


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="input CSV path")
    p.add_argument("--outcome", required=True)
    p.add_argument("--endogenous", required=True,
                   help="endogenous column (comma-separated for several)")
    p.add_argument("--controls", default="",
                   help="comma-separated control columns")


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta-min", type=float, default=1e-3)
    p.add_argument("--corr-floor", type=float, default=0.10)
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--refine-rounds", type=int, default=40)
    p.add_argument("--j-min", type=float, default=6.0)


def _grid(args) -> GridConfig:
    return GridConfig(delta_min=args.delta_min, corr_floor=args.corr_floor,
                      n_points=args.n_points,
                      refine_rounds=args.refine_rounds, j_min=args.j_min)


def _split(csv_list: str) -> list[str]:
    return [c.strip() for c in csv_list.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sivreg",
        description="Synthetic instrumental variable estimation",
        epilog=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--seed", type=int,
                        default=int(os.environ.get("SIVREG_SEED", "0")))
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("SIVREG_THREADS", "1")))
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate a causal effect")
    _add_data_args(p_est)
    _add_grid_args(p_est)
    p_est.add_argument("--method", default="SIV",
                       choices=["OLS", "SIV", "RSIV_p", "RSIV_n",
                                "ExternalIV"])
    p_est.add_argument("--sign", default="auto",
                       choices=["auto", "positive", "negative"])
    p_est.add_argument("--instruments", default="",
                       help="external instrument columns (ExternalIV)")
    p_est.add_argument("--bootstrap", type=int, default=0, metavar="B",
                       help="bootstrap replications (0 disables)")
    p_est.add_argument("--output", required=True, help="output JSON path")

    p_loc = sub.add_parser("locus", help="emit criterion loci for both signs")
    _add_data_args(p_loc)
    _add_grid_args(p_loc)
    p_loc.add_argument("--criterion", default="dt_moment",
                       choices=["dt_moment", "robust_parametric",
                                "robust_nonparametric"])
    p_loc.add_argument("--output", required=True,
                       help="output stem; writes <stem>_kplus.csv, "
                            "<stem>_kminus.csv and <stem>_sign.json")

    p_sim = sub.add_parser("simulate", help="write one generated dataset")
    p_sim.add_argument("--population-size", type=int, default=100_000)
    p_sim.add_argument("--sign", default="positive",
                       choices=["positive", "negative", "none"])
    p_sim.add_argument("--heteroscedastic-variant", action="store_true")
    p_sim.add_argument("--output", required=True, help="output CSV path")

    p_bench = sub.add_parser("benchmark", help="run the Monte Carlo table")
    p_bench.add_argument("--population-size", type=int, default=100_000)
    p_bench.add_argument("--sample-size", type=int, default=1_000)
    p_bench.add_argument("--generations", type=int, default=50)
    p_bench.add_argument("--draws", type=int, default=10)
    p_bench.add_argument("--sign", default="positive",
                         choices=["positive", "negative"])
    p_bench.add_argument("--heteroscedastic-variant", action="store_true")
    p_bench.add_argument("--methods", default="OLS,SIV,RSIV_p,RSIV_n")
    p_bench.add_argument("--output", required=True, help="output CSV path")
    p_bench.add_argument("--estimates-output", default=None,
                         help="optional long-format per-replication CSV")
    return parser


def _cmd_estimate(args) -> int:
    used = ([args.outcome] + _split(args.endogenous) + _split(args.controls)
            + _split(args.instruments))
    data, dropped = ingest_csv(args.input, used)
    endo = _split(args.endogenous)
    spec = ModelSpec(outcome=args.outcome,
                     endogenous=endo[0] if len(endo) == 1 else tuple(endo),
                     controls=tuple(_split(args.controls)),
                     method=args.method, sign=args.sign, grid=_grid(args),
                     instruments=tuple(_split(args.instruments)))
    if len(endo) > 1:
        from .estimate import multi_endogenous_estimate

        if args.bootstrap > 0:
            print("note: --bootstrap applies to single-endogenous estimates "
                  "only; ignored", file=sys.stderr)
        ests = multi_endogenous_estimate(data, spec)
        payload = {"estimates": [e.to_json_dict() for e in ests],
                   "rows_dropped": dropped}
        text = json.dumps(payload, indent=2)
    else:
        est = estimate(data, spec)
        boot = (bootstrap(data, spec, args.bootstrap, args.seed,
                          threads=args.threads)
                if args.bootstrap > 0 else None)
        text = estimate_to_json(est, boot)
    Path(args.output).write_text(text + "\n", encoding="utf-8")
    print(f"wrote {args.output} (rows dropped: {dropped})")
    return 0


def _cmd_locus(args) -> int:
    used = [args.outcome] + _split(args.endogenous) + _split(args.controls)
    data, _ = ingest_csv(args.input, used)
    endo = _split(args.endogenous)
    context = build_context(data, args.outcome, endo[0],
                            _split(args.controls))
    factory = None
    if args.criterion == "robust_parametric":
        factory = lambda ctx, k: robust_criterion(ctx, k, "parametric")
    elif args.criterion == "robust_nonparametric":
        factory = lambda ctx, k: robust_criterion(ctx, k, "nonparametric")
    decision = determine_sign(context, _grid(args), args.criterion,
                              criterion_factory=factory)
    stem = Path(args.output)
    plus_path = stem.with_name(stem.name + "_kplus.csv")
    minus_path = stem.with_name(stem.name + "_kminus.csv")
    decision.locus_plus.to_csv(plus_path)
    decision.locus_minus.to_csv(minus_path)
    sign_path = stem.with_name(stem.name + "_sign.json")
    sign_path.write_text(json.dumps({
        "verdict": decision.verdict,
        "k": decision.k,
        "delta0_plus": decision.delta0_plus,
        "delta0_minus": decision.delta0_minus,
    }, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {plus_path}, {minus_path}, {sign_path}")
    return 0


def _cmd_simulate(args) -> int:
    config = DgpConfig(population_size=args.population_size,
                       sample_size=min(1000, args.population_size),
                       n_generations=1, n_bootstrap_per_generation=1,
                       endogeneity_sign=args.sign, seed=args.seed,
                       heteroscedastic_variant=args.heteroscedastic_variant)
    data, truth = generate_population(config)
    data.to_csv(args.output)
    print(f"wrote {args.output} (beta_true={truth['beta_true']})")
    return 0


def _cmd_benchmark(args) -> int:
    config = DgpConfig(population_size=args.population_size,
                       sample_size=args.sample_size,
                       n_generations=args.generations,
                       n_bootstrap_per_generation=args.draws,
                       endogeneity_sign=args.sign, seed=args.seed,
                       heteroscedastic_variant=args.heteroscedastic_variant)
    summary = run_monte_carlo(config, _split(args.methods),
                              threads=args.threads,
                              estimates_csv=args.estimates_output)
    summary.to_csv(args.output)
    print(f"wrote {args.output}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    handlers = {"estimate": _cmd_estimate, "locus": _cmd_locus,
                "simulate": _cmd_simulate, "benchmark": _cmd_benchmark}
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except SivError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # no traceback reaches the user
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
