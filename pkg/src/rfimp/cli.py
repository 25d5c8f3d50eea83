"""Command-line interface: impute, ampute, and simulate subcommands.

Exit codes: 0 success, 1 usage error, 2 runtime error. The seed comes
from --seed when given, else the RFIMP_SEED environment variable, else a
fixed default, and all randomness is derived from it through the
splittable scheme in :mod:`rfimp.rng`, so identical invocations produce
byte-identical outputs regardless of --threads.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .ampute import AmputeConfig, Mechanism, ampute
from .data import ColumnKind, ColumnSpec, infer_specs, read_csv, write_csv
from .forest import ForestParams
from .mice import ImputationConfig, ImputeMethod, run as run_mice
from .rng import DEFAULT_SEED, generator
from .simstudy import ScenarioConfig, run_study

logger = logging.getLogger(__name__)

_MECHANISMS = {"mcar": Mechanism.MCAR, "mar-right": Mechanism.MAR_RIGHT}
_METHODS = {
    "empirical": ImputeMethod.EMPIRICAL_RF,
    "normal": ImputeMethod.NORMAL_RF,
    "pmm": ImputeMethod.PMM,
}


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1 (argparse's default is 2, reserved here for
    # runtime errors)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _parse_col(text: str) -> ColumnSpec:
    name, sep, rest = text.partition(":")
    if not sep or not name:
        raise argparse.ArgumentTypeError(
            f"expected NAME:cont or NAME:cat=L1,L2,..., got {text!r}"
        )
    if rest == "cont":
        return ColumnSpec(name, ColumnKind.CONTINUOUS)
    if rest.startswith("cat="):
        levels = tuple(lv for lv in rest[4:].split(",") if lv)
        if not levels:
            raise argparse.ArgumentTypeError(f"no levels given in {text!r}")
        return ColumnSpec(name, ColumnKind.CATEGORICAL, levels)
    raise argparse.ArgumentTypeError(
        f"column kind must be 'cont' or 'cat=...', got {text!r}"
    )


def _parse_name_list(text: str) -> tuple[str, ...]:
    names = tuple(n for n in text.split(",") if n)
    if not names:
        raise argparse.ArgumentTypeError("expected a comma-separated name list")
    return names


def _parse_methods(text: str) -> tuple[str, ...]:
    methods = _parse_name_list(text)
    for m in methods:
        if m not in _METHODS:
            raise argparse.ArgumentTypeError(
                f"unknown method {m!r}; choose from {sorted(_METHODS)}"
            )
    return methods


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None,
                     help="master random seed (default: RFIMP_SEED env var, "
                          f"else {DEFAULT_SEED})")
    sub.add_argument("--threads", type=int, default=0,
                     help="worker processes, 0 = one per CPU (default 0); "
                          "results do not depend on this")
    sub.add_argument("-v", "--verbose", action="count", default=0,
                     help="-v for progress, -vv for debug output")


def build_parser() -> _Parser:
    parser = _Parser(prog="rfimp",
                     description="Random-forest multiple imputation tools")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    p_imp = subs.add_parser("impute", help="multiply impute a CSV file")
    p_imp.add_argument("--in", dest="infile", required=True, metavar="CSV")
    p_imp.add_argument("--out-prefix", required=True,
                       help="writes PREFIX_1.csv ... PREFIX_m.csv and "
                            "PREFIX_trace.csv")
    p_imp.add_argument("--method", choices=sorted(_METHODS), default="empirical")
    p_imp.add_argument("--m", type=int, default=10, help="number of imputations")
    p_imp.add_argument("--maxit", type=int, default=10, help="chain iterations")
    p_imp.add_argument("--trees", type=int, default=10, help="trees per forest")
    p_imp.add_argument("--donors", type=int, default=5, help="PMM donor count")
    p_imp.add_argument("--missing-token", default="NA")
    p_imp.add_argument("--col", type=_parse_col, action="append", default=None,
                       metavar="NAME:cont|NAME:cat=L1,L2,...",
                       help="declare a column type (repeatable; default: "
                            "infer numeric columns as continuous)")
    _add_common(p_imp)

    p_amp = subs.add_parser("ampute", help="introduce missingness into a CSV file")
    p_amp.add_argument("--in", dest="infile", required=True, metavar="CSV")
    p_amp.add_argument("--out", required=True, metavar="CSV")
    p_amp.add_argument("--cols", type=_parse_name_list, required=True,
                       help="comma-separated columns amputed jointly")
    p_amp.add_argument("--prop", type=float, default=0.5,
                       help="expected fraction of incomplete rows")
    p_amp.add_argument("--mech", choices=sorted(_MECHANISMS), default="mcar")
    p_amp.add_argument("--weight", default=None,
                       help="column driving MAR missingness")
    p_amp.add_argument("--missing-token", default="NA")
    _add_common(p_amp)

    p_sim = subs.add_parser("simulate",
                            help="run the amputation/imputation calibration study")
    p_sim.add_argument("--mech", choices=sorted(_MECHANISMS), default="mcar")
    p_sim.add_argument("--reps", type=int, default=1000)
    p_sim.add_argument("--n", type=int, default=2000, help="rows per replicate")
    p_sim.add_argument("--m", type=int, default=10, help="number of imputations")
    p_sim.add_argument("--maxit", type=int, default=10, help="chain iterations")
    p_sim.add_argument("--trees", type=int, default=10, help="trees per forest")
    p_sim.add_argument("--donors", type=int, default=5, help="PMM donor count")
    p_sim.add_argument("--prop", type=float, default=0.5,
                       help="expected fraction of incomplete rows")
    p_sim.add_argument("--methods", type=_parse_methods,
                       default=("empirical", "normal", "pmm"),
                       help="comma-separated subset of empirical,normal,pmm")
    p_sim.add_argument("--out", required=True, metavar="DIR",
                       help="directory for raw.csv and summary.csv")
    _add_common(p_sim)
    return parser


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RFIMP_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"RFIMP_SEED must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def _resolve_threads(args) -> int:
    if args.threads < 0:
        raise ValueError(f"--threads must be >= 0, got {args.threads}")
    return args.threads if args.threads > 0 else (os.cpu_count() or 1)


def _read_dataset(path: str, specs, missing_token: str):
    if specs is None:
        specs = infer_specs(path, missing_token=missing_token)
    return read_csv(path, specs, missing_token=missing_token)


def _cmd_impute(args) -> int:
    seed = _resolve_seed(args)
    ds = _read_dataset(args.infile, args.col, args.missing_token)
    method = _METHODS[args.method]
    cfg = ImputationConfig(
        m=args.m, maxit=args.maxit,
        methods={name: method for name in ds.incomplete_columns()},
        forest_params=ForestParams(n_trees=args.trees),
        pmm_donors=args.donors,
        rng_seed=seed,
    )
    result = run_mice(ds, cfg)
    prefix = Path(args.out_prefix)
    if prefix.parent != Path("."):
        prefix.parent.mkdir(parents=True, exist_ok=True)
    for k, completed in enumerate(result.datasets, start=1):
        out = prefix.with_name(f"{prefix.name}_{k}.csv")
        write_csv(completed, out, missing_token=args.missing_token)
        logger.info("wrote %s", out)
    trace_path = prefix.with_name(f"{prefix.name}_trace.csv")
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["imputation", "iteration", "column", "mean"])
        means = result.chain_means
        for k in range(means.shape[0]):
            for it in range(means.shape[1]):
                for j, col in enumerate(result.trace_columns):
                    w.writerow([k + 1, it + 1, col, repr(float(means[k, it, j]))])
    logger.info("wrote %s", trace_path)
    diag = result.diagnostics
    if diag.empty_pool_fallbacks or diag.ridge_fallbacks:
        logger.warning("fallbacks used: %d empty-pool, %d ridge",
                       diag.empty_pool_fallbacks, diag.ridge_fallbacks)
    return 0


def _cmd_ampute(args) -> int:
    seed = _resolve_seed(args)
    ds = _read_dataset(args.infile, None, args.missing_token)
    cfg = AmputeConfig(
        pattern_columns=args.cols, prop=args.prop,
        mechanism=_MECHANISMS[args.mech], weight_column=args.weight,
        rng_seed=seed,
    )
    out = ampute(ds, cfg, generator(seed))
    write_csv(out, args.out, missing_token=args.missing_token)
    logger.info("wrote %s", args.out)
    return 0


def _cmd_simulate(args) -> int:
    seed = _resolve_seed(args)
    cfg = ScenarioConfig(
        n_obs=args.n, n_reps=args.reps, mechanism=_MECHANISMS[args.mech],
        prop=args.prop, methods=tuple(args.methods), m=args.m,
        maxit=args.maxit, n_trees=args.trees, pmm_donors=args.donors,
        rng_seed=seed, n_workers=_resolve_threads(args),
    )
    result = run_study(cfg, out_dir=args.out)
    print(f"{'method':<10} {'coef':<4} {'rel_bias%':>10} {'width':>8} {'coverage':>9}")
    for row in result.summary:
        print(f"{row.method:<10} {row.coefficient:<4} "
              f"{100 * row.median_rel_bias:>+10.2f} {row.median_ci_width:>8.4f} "
              f"{row.coverage:>9.3f}")
    if result.failures:
        print(f"{len(result.failures)} stage failure(s); see failures.csv")
    return 0


_COMMANDS = {"impute": _cmd_impute, "ampute": _cmd_ampute, "simulate": _cmd_simulate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - reported as exit code 2
        qualified = f"{type(exc).__module__}.{type(exc).__qualname__}"
        print(f"rfimp: error: {qualified}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
