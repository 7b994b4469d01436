"""Command-line front end: ``lookahead {analyze,optimize,simulate,pipeline,sweep}``.

Every command takes ``--config PATH`` (JSON or YAML mapping of option names
to values; explicit flags win), ``--seed``, ``--out`` and ``--format``.
Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import yaml

from . import analytics as an
from . import stochastics as st
from .errors import (
    BackendError,
    ConfigError,
    CycleError,
    DomainError,
    NumericError,
    check_positive_int,
    check_probability,
)
from .engine.backends import make_mock_backends, random_corpus, step_cost
from .engine.pipeline import PipelineConfig, run_autoregressive_baseline, run_pipeline, wrap_token_sd
from .engine.token_sd import TokenSDConfig
from .engine.trace import Trace, split_steps
from .engine.verifiers import parse_verifier

log = logging.getLogger("lookahead")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
FLOAT_FORMAT = "%.12g"
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

Row = dict[str, Any]

ANALYZE_COLUMNS = [
    "alpha1", "c1", "alpha2", "c2", "k1", "k2",
    "f_sync", "f_async", "g_background", "g_appendix", "h_sync", "h_async",
]
OPTIMIZE_COLUMNS = [
    "alpha1", "alpha2", "c1", "c2", "M", "mode", "k1", "k2", "parallel_dim_f", "parallel_dim_g",
    "speedup", "eq_step_level_holds", "eq_token_level_holds", "preconditions_met", "predicted_regime",
]
SIMULATE_COLUMNS = ["quantity", "alpha", "c", "k", "n", "seed", "analytic", "mc_mean", "mc_stderr", "z"]
SWEEP_COLUMNS = ["gamma", "method", "k1", "k2", "analytic_speedup", "engine_speedup"]
PIPELINE_COLUMNS = [
    "mode", "gamma", "W", "verifier", "token_sd", "emitted_steps", "total_wall_time", "accept_rate",
    "measured_speedup", "compute_units", "proposed", "accepted", "baseline_wall_time",
    "judge_malformed", "baseline_identical", "schema_version",
]


# ---------------------------------------------------------------- values


def parse_grid(name: str, value: Any, kind: Callable[[Any], Any] = float) -> list:
    """Grid from a list, a scalar, or a string of comma-separated items / ``a..b`` integer ranges."""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        items: Iterable[Any] = value
    elif isinstance(value, str):
        items = [part.strip() for part in value.split(",") if part.strip()]
    else:
        items = [value]
    out = []
    for item in items:
        try:
            if isinstance(item, str) and ".." in item:
                lo, hi = (int(x) for x in item.split(".."))
                out.extend(kind(v) for v in range(lo, hi + 1))
            else:
                if kind is int and float(item) != int(float(item)):
                    raise ValueError(item)
                out.append(kind(float(item)) if kind is int else kind(item))
        except (TypeError, ValueError) as exc:
            raise ConfigError(name, f"cannot parse grid item {item!r}") from exc
    return sorted(set(out))


def normalize(value: Any) -> Any:
    """Round floats to the emitted precision so rows round-trip exactly."""
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            return None
        return float(FLOAT_FORMAT % value)
    return value


def normalize_rows(rows: list[Row]) -> list[Row]:
    return [{k: normalize(v) for k, v in row.items()} for row in rows]


def _cell(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return FLOAT_FORMAT % value
    return str(value)


def _parse_cell(text: str) -> Any:
    if text == "null":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def format_rows(rows: list[Row], columns: Sequence[str], fmt: str, header: str | None = None) -> str:
    if fmt == "json":
        return json.dumps({"columns": list(columns), "rows": rows}, indent=2) + "\n"
    buf = io.StringIO()
    if header:
        buf.write(f"# {header}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(col)) for col in columns])
    return buf.getvalue()


def read_rows(text: str, fmt: str = "csv") -> list[Row]:
    """Inverse of :func:`format_rows`."""
    if fmt == "json":
        return json.loads(text)["rows"]
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    reader = csv.reader(lines)
    columns = next(reader, None)
    if columns is None:
        return []
    return [dict(zip(columns, (_parse_cell(c) for c in cells))) for cells in reader]


# ---------------------------------------------------------------- commands


def _probabilities(name: str, values: list[float], closed_low: bool = False) -> list[float]:
    return [check_probability(name, v, closed_low=closed_low) for v in values]


def _positive_ints(name: str, values: list[int], minimum: int = 1) -> list[int]:
    return [check_positive_int(name, v, minimum) for v in values]


def cmd_analyze(args: argparse.Namespace) -> list[Row]:
    alpha1 = _probabilities("alpha1", parse_grid("alpha1", args.alpha1))
    c1 = _probabilities("c1", parse_grid("c1", args.c1))
    alpha2 = _probabilities("alpha2", parse_grid("alpha2", args.alpha2))
    c2 = _probabilities("c2", parse_grid("c2", args.c2))
    k1s = _positive_ints("k1", parse_grid("k1", args.k1, int))
    k2s = _positive_ints("k2", parse_grid("k2", args.k2, int))
    rows = []
    for a1 in alpha1:
        for cc1 in c1:
            for a2 in alpha2:
                for cc2 in c2:
                    params = an.SpecParams(a1, a2, cc1, cc2)
                    for k1 in k1s:
                        fs = an.step_speedup_sync(a1, cc1, k1)
                        fa = an.step_speedup_async(a1, cc1, k1)
                        for k2 in k2s:
                            g_app = an.token_speedup_g(a2, cc2, k2, an.GConvention.APPENDIX)
                            rows.append(
                                {
                                    "alpha1": a1, "c1": cc1, "alpha2": a2, "c2": cc2, "k1": k1, "k2": k2,
                                    "f_sync": fs,
                                    "f_async": fa,
                                    "g_background": an.token_speedup_g(a2, cc2, k2, an.GConvention.BACKGROUND),
                                    "g_appendix": g_app,
                                    "h_sync": an.combined_speedup_h(params, k1, k2, an.Mode.SYNC),
                                    "h_async": an.combined_speedup_h(params, k1, k2, an.Mode.ASYNC),
                                }
                            )
    return rows


def _mode(value: Any) -> an.Mode:
    try:
        return an.Mode(value)
    except ValueError as exc:
        raise ConfigError("mode", f"must be sync or async, got {value!r}") from exc


def _scalar(name: str, value: Any, kind: Callable[[Any], Any] = float) -> Any:
    grid = parse_grid(name, value, kind)
    if len(grid) != 1:
        raise ConfigError(name, f"expected a single value, got {value!r}")
    return grid[0]


def cmd_optimize(args: argparse.Namespace) -> list[Row]:
    params = an.SpecParams(
        _scalar("alpha1", args.alpha1), _scalar("alpha2", args.alpha2),
        _scalar("c1", args.c1), _scalar("c2", args.c2),
    )
    M = check_positive_int("M", _scalar("M", args.M, int))
    mode = _mode(args.mode)
    result = an.optimal_allocation(params, M, mode)
    row: Row = {
        "alpha1": params.alpha1, "alpha2": params.alpha2, "c1": params.c1, "c2": params.c2,
        "M": M, "mode": mode.value, "k1": result.k1, "k2": result.k2,
        "parallel_dim_f": result.parallel_dim_f, "parallel_dim_g": result.parallel_dim_g,
        "speedup": result.speedup,
        "eq_step_level_holds": None, "eq_token_level_holds": None,
        "preconditions_met": None, "predicted_regime": None,
    }
    if mode is an.Mode.SYNC:
        report = an.hybrid_conditions_sync(params, M) if M >= 4 and M % 2 == 0 else an.indeterminate_report()
        row.update(
            eq_step_level_holds=report.eq_step_level_holds,
            eq_token_level_holds=report.eq_token_level_holds,
            preconditions_met=report.preconditions_met,
            predicted_regime=report.predicted_regime.value,
        )
    return [row]


def _z(est: st.MonteCarloEstimate, expected: float) -> float | None:
    return est.z_score(expected)


def cmd_simulate(args: argparse.Namespace) -> list[Row]:
    quantities = parse_grid("quantity", args.quantity, str)
    unknown = set(quantities) - {"sync", "async", "expectations", "multibranch"}
    if unknown:
        raise ConfigError("quantity", f"unknown quantities {sorted(unknown)}")
    alphas = _probabilities("alpha", parse_grid("alpha", args.alpha))
    cs = _probabilities("c", parse_grid("c", args.c))
    ks = _positive_ints("k", parse_grid("k", args.k, int))
    n = check_positive_int("n", args.n)
    seed = st.check_seed(args.seed)
    workers = check_positive_int("workers", args.workers)
    rows: list[Row] = []

    def add(quantity: str, alpha: float, c: float | None, k: int, analytic: float, est: st.MonteCarloEstimate):
        rows.append(
            {
                "quantity": quantity, "alpha": alpha, "c": c, "k": k, "n": n, "seed": seed,
                "analytic": analytic, "mc_mean": est.mean, "mc_stderr": est.stderr, "z": _z(est, analytic),
            }
        )

    for quantity in quantities:
        for alpha in alphas:
            for k in ks:
                if quantity == "expectations":
                    ex, ec, em = st.mc_expectations(alpha, k, n, seed, workers)
                    add("E_X", alpha, None, k, an.expected_accept_run(alpha), ex)
                    add("E_ceil", alpha, None, k, an.expected_ceil_term(alpha, k), ec)
                    add("E_mod", alpha, None, k, an.expected_mod_term(alpha, k), em)
                elif quantity == "multibranch":
                    est = st.mc_multibranch_accept(alpha, k, n, seed, workers)
                    add("multibranch", alpha, None, k, 1.0 - (1.0 - alpha) ** k, est)
                else:
                    for c in cs:
                        if quantity == "sync":
                            est = st.mc_sync_speedup(alpha, c, k, n, seed, workers)
                            add("sync", alpha, c, k, an.step_speedup_sync(alpha, c, k), est)
                        else:
                            est = st.mc_async_speedup(alpha, c, k, n, seed, workers)
                            add("async", alpha, c, k, an.step_speedup_async(alpha, c, k), est)
    return rows


def load_corpus(args: argparse.Namespace) -> list[str]:
    if args.corpus:
        path = Path(args.corpus)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise BackendError(f"cannot read corpus {path}: {exc}", {"corpus": str(path)}) from exc
        steps = [s.text for s in split_steps(text)]
        if not steps:
            raise ConfigError("corpus", f"{path} contains no steps")
        return steps
    n = check_positive_int("corpus_steps", args.corpus_steps)
    return random_corpus(n, args.seed)


def _token_sd(args: argparse.Namespace, k2: int | None) -> TokenSDConfig | None:
    if k2 is None:
        return None
    try:
        return TokenSDConfig(
            k2=k2, alpha2=args.alpha2, c2=args.c2, tokens_per_step=args.tokens_per_step
        )
    except DomainError as exc:
        raise ConfigError(exc.name, str(exc).split(": ", 1)[-1]) from exc


def engine_run(
    args: argparse.Namespace, corpus: list[str], mode: an.Mode, gamma: int, width: int, token_sd: int | None
):
    verifier = parse_verifier(args.verifier, seed=args.seed)
    config = PipelineConfig(
        gamma=gamma,
        W=width,
        mode=mode,
        token_sd=_token_sd(args, token_sd),
        verifier=verifier,
        max_steps=check_positive_int("max_steps", args.max_steps),
    )
    corruption = args.corruption
    if not 0.0 <= corruption < 1.0:
        raise ConfigError("corruption", f"must lie in [0, 1), got {corruption!r}")
    if not 0.0 < args.c1:
        raise ConfigError("c1", f"must be positive, got {args.c1!r}")
    target, draft = make_mock_backends(corpus, corruption, args.seed, draft_cost=args.c1)
    return run_pipeline(config, draft, target, seed=args.seed), target


def cmd_pipeline(args: argparse.Namespace) -> list[Row]:
    corpus = load_corpus(args)
    mode = _mode(args.mode)
    gamma = check_positive_int("gamma", args.gamma)
    width = check_positive_int("width", args.width)
    if args.token_sd is not None:
        check_positive_int("token_sd", args.token_sd)
    report, target = engine_run(args, corpus, mode, gamma, width, args.token_sd)
    identical = None
    if args.compare_baseline:
        base = run_autoregressive_baseline(target, Trace(), args.max_steps)
        identical = base.output_text == report.output_text
        report.baseline_wall_time = base.total_wall_time
        report.measured_speedup = (
            base.total_wall_time / report.total_wall_time if report.total_wall_time > 0 else 1.0
        )
    row = {
        "mode": mode.value, "gamma": gamma, "W": width, "verifier": args.verifier,
        "token_sd": args.token_sd, "emitted_steps": report.emitted_steps,
        "total_wall_time": report.total_wall_time, "accept_rate": report.accept_rate,
        "measured_speedup": report.measured_speedup, "compute_units": report.compute_units,
        "proposed": report.proposed, "accepted": report.accepted,
        "baseline_wall_time": report.baseline_wall_time, "judge_malformed": report.judge_malformed,
        "baseline_identical": identical, "schema_version": report.schema_version,
    }
    args._report = report
    return [row]


def cmd_sweep(args: argparse.Namespace) -> list[Row]:
    params = an.SpecParams(
        _scalar("alpha1", args.alpha1), _scalar("alpha2", args.alpha2),
        _scalar("c1", args.c1), _scalar("c2", args.c2),
    )
    mode = _mode(args.mode)
    gammas = _positive_ints("gamma", parse_grid("gamma", args.gamma, int))
    corpus = None
    if args.engine:
        args.corpus_steps = args.engine_steps
        args.corruption = 1.0 - params.alpha1
        args.c1 = params.c1
        args.alpha2, args.c2 = params.alpha2, params.c2
        args.max_steps = args.engine_steps
        corpus = load_corpus(args)
    rows = []
    for gamma in gammas:
        plans = {
            "lr": (gamma, 1),
            "sd": (1, gamma),
        }
        best = an.optimal_allocation(params, gamma, mode)
        plans["lr+sd"] = (best.k1, best.k2)
        for method in ("lr", "sd", "lr+sd"):
            k1, k2 = plans[method]
            engine = None
            if corpus is not None:
                engine = _engine_speedup(args, corpus, mode, k1, k2)
            rows.append(
                {
                    "gamma": gamma, "method": method, "k1": k1, "k2": k2,
                    "analytic_speedup": an.combined_speedup_h(params, k1, k2, mode),
                    "engine_speedup": engine,
                }
            )
    return rows


def _engine_speedup(args: argparse.Namespace, corpus: list[str], mode: an.Mode, k1: int, k2: int) -> float:
    token_sd = k2 if k2 > 1 else None
    if mode is an.Mode.ASYNC:
        report, _ = engine_run(args, corpus, mode, k1, 1, token_sd)
        return report.measured_speedup
    # The sync engine at depth gamma issues gamma + 1 target calls per cycle: k1 = gamma + 1.
    if k1 > 1:
        report, _ = engine_run(args, corpus, mode, k1 - 1, 1, token_sd)
        return report.measured_speedup
    if token_sd is None:
        return 1.0
    target, draft = make_mock_backends(corpus, 0.0, args.seed, draft_cost=args.c1)
    _, wrapped = wrap_token_sd(draft, target, _token_sd(args, token_sd), args.seed)
    trace, wall = Trace(), 0.0
    while trace.length < args.max_steps:
        step = wrapped.generate_step(trace)
        if step.eos:
            break
        wall += step_cost(wrapped, step)
        trace = trace.extend(step)
    return trace.length * target.cost / wall if wall > 0 else 1.0


# ---------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML file of option values (flags override)")
    p.add_argument("--seed", type=int, default=0, help="unsigned 64-bit seed")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_spec_params(p: argparse.ArgumentParser, grid: bool) -> None:
    kind = str if grid else float
    p.add_argument("--alpha1", type=kind, default="0.6" if grid else 0.6)
    p.add_argument("--c1", type=kind, default="0.2" if grid else 0.2)
    p.add_argument("--alpha2", type=kind, default="0.7" if grid else 0.7)
    p.add_argument("--c2", type=kind, default="0.1" if grid else 0.1)


def _add_engine(p: argparse.ArgumentParser) -> None:
    p.add_argument("--verifier", default="exact", help="NAME[:k=v,...]; exact, ngram, random, score")
    p.add_argument("--corpus", help="text file; steps separated by blank lines")
    p.add_argument("--corpus-steps", type=int, default=2000, help="synthetic corpus length when --corpus is absent")
    p.add_argument("--corruption", type=float, default=0.4, help="per-step draft corruption probability")
    p.add_argument("--c1", type=float, default=0.2, help="draft step cost in target-step units")
    p.add_argument("--max-steps", type=int, default=10_000)
    p.add_argument("--alpha2", type=float, default=0.7, help="token-level acceptance for --token-sd")
    p.add_argument("--c2", type=float, default=0.1, help="token-level cost ratio for --token-sd")
    p.add_argument("--tokens-per-step", type=int, default=64)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lookahead", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="closed-form f, g and h over parameter grids")
    _add_common(p)
    _add_spec_params(p, grid=True)
    p.add_argument("--k1", default="1..8", help="grid, e.g. 1..8 or 1,2,4")
    p.add_argument("--k2", default="1")
    p.set_defaults(func=cmd_analyze, columns=ANALYZE_COLUMNS)

    p = sub.add_parser("optimize", help="best (k1, k2) under a parallelism budget M")
    _add_common(p)
    _add_spec_params(p, grid=False)
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--mode", choices=("sync", "async"), default="async")
    p.set_defaults(func=cmd_optimize, columns=OPTIMIZE_COLUMNS)

    p = sub.add_parser("simulate", help="Monte Carlo estimates next to their closed forms")
    _add_common(p)
    p.add_argument("--quantity", default="sync", help="any of sync, async, expectations, multibranch")
    p.add_argument("--alpha", default="0.6")
    p.add_argument("--c", default="0.2")
    p.add_argument("--k", default="3", help="k1, gamma or W depending on the quantity")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate, columns=SIMULATE_COLUMNS)

    p = sub.add_parser("pipeline", help="run the speculation engine on mock backends")
    _add_common(p)
    p.add_argument("--mode", choices=("sync", "async"), default="sync")
    p.add_argument("--gamma", type=int, default=3)
    p.add_argument("--width", type=int, default=1)
    p.add_argument("--token-sd", type=int, default=None, metavar="K2")
    p.add_argument("--compare-baseline", action="store_true")
    p.add_argument("--cycles", action="store_true", help="include per-cycle records in JSON output")
    _add_engine(p)
    p.set_defaults(func=cmd_pipeline, columns=PIPELINE_COLUMNS)

    p = sub.add_parser("sweep", help="speedup against the parallelism budget for LR, SD and LR+SD")
    _add_common(p)
    _add_spec_params(p, grid=False)
    p.add_argument("--mode", choices=("sync", "async"), default="async")
    p.add_argument("--gamma", default="1..16", help="budget grid")
    p.add_argument("--engine", action="store_true", help="also measure each plan on the mock engine")
    p.add_argument("--engine-steps", type=int, default=1000)
    p.add_argument("--verifier", default="exact")
    p.add_argument("--tokens-per-step", type=int, default=64)
    p.add_argument("--corpus", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_sweep, columns=SWEEP_COLUMNS)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # type: ignore[union-attr]
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def load_config(path: str) -> dict[str, Any]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        known = {a.dest for a in sub._actions} - {"help", "config"}
        values = load_config(args.config)
        for key in values:
            if key not in known:
                raise ConfigError(key, f"unknown key in {args.config}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def configure_logging() -> None:
    level = os.environ.get("LOOKAHEAD_LOG", "warn").lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run(argv: Sequence[str] | None = None) -> tuple[list[Row], argparse.Namespace]:
    args = parse_args(argv)
    st.check_seed(args.seed)
    rows = normalize_rows(args.func(args))
    return rows, args


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    try:
        rows, args = run(argv)
        header = "columns: " + ", ".join(args.columns) if args.command == "sweep" else None
        if args.command == "pipeline" and args.format == "json":
            payload = args._report.to_dict(include_cycles=args.cycles)
            payload["baseline_identical"] = rows[0]["baseline_identical"]
            text = json.dumps(payload, indent=2) + "\n"
        else:
            text = format_rows(rows, args.columns, args.format, header)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BackendError, CycleError, NumericError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
