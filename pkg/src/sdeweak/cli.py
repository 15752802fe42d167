"""Command-line surface: reproducible pricing runs, sweeps, diagnostics.

Commands: ``price``, ``sweep``, ``check``, ``convergence``, ``benchmark``.
Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.  Every
output file gets a ``<file>.manifest`` companion (flat ``key=value`` lines)
recording the fully resolved parameter set; re-running from a manifest
reproduces the outputs bit-for-bit at any ``--threads`` setting.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .experiments import (
    EstimationError,
    NoisePlan,
    PayoffKind,
    compute_benchmark,
    convergence_order,
    epsilon_study,
    estimate,
    make_payoff,
    read_sup_csv,
    strike_sweep,
    write_sup_csv,
    write_sweep_csv,
)
from .model import (
    ContractViolation,
    commutativity_check,
    phi3_coefficient_tensor,
)
from .noise import NoiseBudgetExceeded, NoiseKind
from .presets import PRESET_IDS, preset
from .schemes import SCHEME_TOKENS, SimConfig, parse_scheme

_DEFAULT_PAYOFF = {
    "bs-asian": "asian-call",
    "heston-asian": "asian-digital",
    "small-diffusion": "asian-call",
    "gbm": "asian-call",
}
_DEFAULT_STRIKES = {
    "small-diffusion": "0.2:1.0:0.1",
}
_FULL_SCALE_BENCH_N = {"heston-asian": 2048}


def _parse_strikes(text: str) -> list:
    """Inclusive start:stop:step ranges, or comma-separated values."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("strike ranges use start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("strike step must be positive")
        count = int(round((stop - start) / step))
        values = [start + i * step for i in range(count + 1) if start + i * step <= stop + 1e-9]
        if not values:
            raise ValueError("empty strike range")
        return values
    return [float(p) for p in text.split(",") if p]


def _parse_int_list(text: str) -> list:
    return [int(p) for p in text.split(",") if p]


def _fmt_state(state) -> str:
    return "(" + ", ".join("%g" % v for v in np.asarray(state).ravel()) + ")"


def _parse_params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError("--param expects key=value, got %r" % pair)
        key, value = pair.split("=", 1)
        out[key] = float(value)
    return out


def write_manifest(path: str, command: str, params: dict, outputs) -> None:
    lines = {"command": command, "version": __version__, "timestamp": repr(time.time())}
    for key, value in params.items():
        lines[key] = str(value)
    lines["outputs"] = ";".join(outputs)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(lines):
            fh.write("%s=%s\n" % (key, lines[key]))


def read_manifest(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and "=" in line:
                key, value = line.split("=", 1)
                out[key] = value
    return out


_SKIP_MANIFEST_KEYS = {"command", "version", "timestamp", "outputs", "mode"}


def manifest_to_argv(path: str, overrides: dict | None = None) -> list:
    """Rebuild the argv of the run that wrote this manifest.

    ``overrides`` replaces recorded values (e.g. a different --threads);
    determinism does not depend on them.
    """
    entries = read_manifest(path)
    merged = dict(entries)
    for key, value in (overrides or {}).items():
        merged[key] = str(value)
    argv = [entries["command"]]
    mode = merged.get("mode")
    if mode == "qmc":
        argv.append("--qmc")
    elif mode == "mc":
        argv.append("--mc")
    for key, value in merged.items():
        if key in _SKIP_MANIFEST_KEYS:
            continue
        if key == "inputs":
            for item in value.split(";"):
                if item:
                    argv.extend(["--in", item])
            continue
        if key == "param":
            for item in value.split(";"):
                if item:
                    argv.extend(["--param", item])
            continue
        flag = "--" + key.replace("_", "-")
        if value == "True":
            argv.append(flag)
        elif value == "False":
            continue
        else:
            argv.extend([flag, value])
    return argv


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed for all streams")
    p.add_argument("--threads", type=int, default=1, help="worker cap for path batches")
    p.add_argument("--out", default=None, help="output CSV path")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--qmc", dest="qmc", action="store_true", help="randomised Sobol points")
    mode.add_argument("--mc", dest="qmc", action="store_false", help="pseudo-random points")
    p.set_defaults(qmc=False)
    p.add_argument(
        "--paper-scale",
        action="store_true",
        help="use the full experiment budgets instead of desk-scale defaults",
    )
    p.add_argument(
        "--param",
        action="append",
        metavar="KEY=VALUE",
        help="override a preset model parameter (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdeweak",
        description="Weak approximation of SDEs: pricing runs, bias sweeps, diagnostics.",
    )
    parser.add_argument("--version", action="version", version="sdeweak " + __version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_price = sub.add_parser("price", help="estimate one payoff value")
    p_price.add_argument("--model", required=True, choices=PRESET_IDS)
    p_price.add_argument("--scheme", required=True, choices=SCHEME_TOKENS)
    p_price.add_argument("--payoff", choices=[k.value for k in PayoffKind], default=None)
    p_price.add_argument("--strike", type=float, required=True)
    p_price.add_argument("--n", type=int, default=16, help="discretisation steps")
    p_price.add_argument("--paths", type=int, default=100_000, help="total path budget")
    p_price.add_argument("--reps", type=int, default=None, help="replications (QMC default 16)")
    _add_common(p_price)

    p_sweep = sub.add_parser("sweep", help="strike sweep against a benchmark")
    p_sweep.add_argument("--model", required=True, choices=PRESET_IDS)
    p_sweep.add_argument("--schemes", default="em,tmilstein,extended")
    p_sweep.add_argument("--n", default="2,4,8,16", help="comma list of step counts")
    p_sweep.add_argument("--strikes", default=None, help="start:stop:step inclusive")
    p_sweep.add_argument("--payoff", choices=[k.value for k in PayoffKind], default=None)
    p_sweep.add_argument("--paths", type=int, default=None)
    p_sweep.add_argument("--reps", type=int, default=None)
    p_sweep.add_argument("--make-benchmark", action="store_true")
    p_sweep.add_argument("--benchmark-paths", type=int, default=None)
    p_sweep.add_argument("--benchmark-n", type=int, default=None)
    p_sweep.add_argument("--benchmark-seed", type=int, default=90210)
    p_sweep.add_argument("--cache-dir", default="benchmarks")
    _add_common(p_sweep)

    p_check = sub.add_parser("check", help="commutativity and leading-error diagnostics")
    p_check.add_argument("--model", required=True)
    p_check.add_argument(
        "--points",
        type=int,
        default=0,
        help="extra sampled states beyond the model's starting point",
    )
    _add_common(p_check)

    p_conv = sub.add_parser("convergence", help="fit weak orders from sweep summaries")
    p_conv.add_argument(
        "--in",
        dest="inputs",
        action="append",
        default=None,
        help="sup-error summary CSV (repeatable)",
    )
    p_conv.add_argument("--model", choices=PRESET_IDS, default=None)
    p_conv.add_argument("--schemes", default="em,tmilstein,extended")
    p_conv.add_argument("--n", default="2,4,8,16")
    p_conv.add_argument("--strikes", default=None)
    p_conv.add_argument("--payoff", choices=[k.value for k in PayoffKind], default=None)
    p_conv.add_argument("--paths", type=int, default=None)
    p_conv.add_argument("--reps", type=int, default=None)
    p_conv.add_argument("--make-benchmark", action="store_true")
    p_conv.add_argument("--benchmark-paths", type=int, default=None)
    p_conv.add_argument("--benchmark-n", type=int, default=None)
    p_conv.add_argument("--benchmark-seed", type=int, default=90210)
    p_conv.add_argument("--cache-dir", default="benchmarks")
    _add_common(p_conv)

    p_bench = sub.add_parser("benchmark", help="compute and cache a benchmark table")
    p_bench.add_argument("--model", required=True, choices=PRESET_IDS)
    p_bench.add_argument("--payoff", choices=[k.value for k in PayoffKind], default=None)
    p_bench.add_argument("--strikes", default=None)
    p_bench.add_argument("--paths", type=int, default=None)
    p_bench.add_argument("--n", type=int, default=None)
    p_bench.add_argument("--cache-dir", default="benchmarks")
    _add_common(p_bench)
    # align the default cache key with sweep's --benchmark-seed default so
    # `benchmark` followed by `sweep` works without flag juggling
    p_bench.set_defaults(seed=90210)

    return parser


@dataclass
class _SweepSettings:
    preset_model: object
    schemes: list
    n_values: list
    strikes: list
    payoff_kind: PayoffKind
    paths: int
    plan: NoisePlan
    bench_paths: int
    bench_n: int


def _resolve_plan(args):
    reps = args.reps
    if args.qmc:
        reps = 16 if reps is None else reps
        plan = NoisePlan(NoiseKind.SOBOL, args.seed, reps)
    else:
        reps = 1 if reps is None else reps
        plan = NoisePlan(NoiseKind.PSEUDO, args.seed, reps)
    return plan, reps


def _resolve_payoff_kind(args, model_id: str) -> PayoffKind:
    token = args.payoff or _DEFAULT_PAYOFF[model_id]
    return PayoffKind(token)


def _resolve_sweep(args, parser) -> _SweepSettings:
    pre = preset(args.model, **_parse_params(args.param))
    if pre.average_coordinate is None:
        parser.error("argument --model: %r has no averaging coordinate to price" % args.model)
    plan, reps = _resolve_plan(args)
    if args.paths is None:
        points = 1_000_000 if args.paper_scale else 100_000
        paths = points * reps
    else:
        paths = args.paths
    bench_paths = args.benchmark_paths
    if bench_paths is None:
        bench_paths = 10_000_000 if args.paper_scale else 1_000_000
    bench_n = args.benchmark_n
    if bench_n is None:
        bench_n = _FULL_SCALE_BENCH_N.get(args.model, 1024) if args.paper_scale else 256
    strikes_text = args.strikes or _DEFAULT_STRIKES.get(args.model, "10:200:10")
    try:
        strikes = _parse_strikes(strikes_text)
        n_values = _parse_int_list(args.n)
        schemes = [parse_scheme(tok) for tok in args.schemes.split(",") if tok]
    except (ValueError, ContractViolation) as exc:
        parser.error(str(exc))
    if not n_values:
        parser.error("argument --n: needs at least one step count")
    if min(n_values) < 1:
        parser.error("argument --n: step counts must be positive")
    return _SweepSettings(
        preset_model=pre,
        schemes=schemes,
        n_values=n_values,
        strikes=strikes,
        payoff_kind=_resolve_payoff_kind(args, args.model),
        paths=paths,
        plan=plan,
        bench_paths=bench_paths,
        bench_n=bench_n,
    )


def _sweep_manifest_params(args, settings: _SweepSettings) -> dict:
    return {
        "param": ";".join(args.param or []),
        "model": args.model,
        "schemes": ",".join(s.value for s in settings.schemes),
        "n": ",".join(str(n) for n in settings.n_values),
        "strikes": args.strikes or _DEFAULT_STRIKES.get(args.model, "10:200:10"),
        "payoff": settings.payoff_kind.value,
        "paths": settings.paths,
        "reps": settings.plan.replications,
        "seed": args.seed,
        "mode": "qmc" if args.qmc else "mc",
        "threads": args.threads,
        "make_benchmark": args.make_benchmark,
        "benchmark_paths": settings.bench_paths,
        "benchmark_n": settings.bench_n,
        "benchmark_seed": args.benchmark_seed,
        "cache_dir": args.cache_dir,
    }


def _get_benchmark(args, settings: _SweepSettings):
    from .experiments import benchmark_cache_key

    key = benchmark_cache_key(
        settings.preset_model,
        settings.payoff_kind,
        settings.strikes,
        args.benchmark_seed,
        settings.bench_paths,
        settings.bench_n,
    )
    cache_file = os.path.join(args.cache_dir, "bench_%s.csv" % key)
    if not args.make_benchmark and not os.path.exists(cache_file):
        raise EstimationError(
            "benchmark cache %s not found (model=%s payoff=%s seed=%d M=%d n=%d "
            "strikes=%s); re-run with --make-benchmark, or run 'sdeweak benchmark' "
            "with matching --seed/--paths/--n/--strikes first"
            % (
                cache_file,
                settings.preset_model.id,
                settings.payoff_kind.value,
                args.benchmark_seed,
                settings.bench_paths,
                settings.bench_n,
                args.strikes or _DEFAULT_STRIKES.get(args.model, "10:200:10"),
            )
        )
    return compute_benchmark(
        settings.preset_model,
        settings.payoff_kind,
        settings.strikes,
        settings.bench_paths,
        settings.bench_n,
        args.benchmark_seed,
        cache_dir=args.cache_dir,
        threads=args.threads,
    )


def _run_sweep(args, parser):
    settings = _resolve_sweep(args, parser)
    bench = _get_benchmark(args, settings)
    result = strike_sweep(
        settings.preset_model,
        settings.schemes,
        settings.n_values,
        settings.strikes,
        settings.paths,
        settings.plan,
        bench,
        payoff_kind=settings.payoff_kind,
        threads=args.threads,
    )
    return settings, bench, result


def cmd_price(args, parser) -> int:
    pre = preset(args.model, **_parse_params(args.param))
    if args.strike <= 0:
        parser.error("argument --strike: must be positive")
    if args.n < 1:
        parser.error("argument --n: must be a positive integer")
    if args.paths < 2:
        parser.error("argument --paths: need at least 2 paths")
    if pre.average_coordinate is None:
        parser.error("argument --model: %r has no averaging coordinate to price" % args.model)
    plan, reps = _resolve_plan(args)
    kind = _resolve_payoff_kind(args, args.model)
    payoff = make_payoff(pre, kind, args.strike)
    cfg = SimConfig(T=pre.horizon, n=args.n, x0=pre.x0, scheme=parse_scheme(args.scheme))
    result = estimate(pre, cfg, payoff, plan, args.paths, threads=args.threads)
    print(
        "%s %s K=%g n=%d: estimate %.10g +- %.3g stderr "
        "(paths=%d, invalid=%d, reps=%d)"
        % (
            args.model,
            args.scheme,
            args.strike,
            args.n,
            result.mean,
            result.stderr,
            result.paths_total,
            result.paths_invalid,
            result.replications,
        )
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("scheme,n,K,M,estimate,stderr\n")
            fh.write(
                "%s,%d,%s,%d,%s,%s\n"
                % (
                    args.scheme,
                    args.n,
                    repr(float(args.strike)),
                    args.paths,
                    repr(result.mean),
                    repr(result.stderr),
                )
            )
        params = {
            "param": ";".join(args.param or []),
            "model": args.model,
            "scheme": args.scheme,
            "payoff": kind.value,
            "strike": args.strike,
            "n": args.n,
            "paths": args.paths,
            "reps": reps,
            "seed": args.seed,
            "mode": "qmc" if args.qmc else "mc",
            "threads": args.threads,
            "out": args.out,
        }
        write_manifest(args.out + ".manifest", "price", params, [args.out])
    return 0


def cmd_sweep(args, parser) -> int:
    settings, bench, result = _run_sweep(args, parser)
    prefix = args.out or ("%s_sweep" % args.model)
    sweep_path = prefix + ".csv"
    sup_path = prefix + "_sup.csv"
    write_sweep_csv(sweep_path, result)
    write_sup_csv(sup_path, result.sup_rows_with_benchmark(bench))
    params = _sweep_manifest_params(args, settings)
    params["out"] = prefix
    write_manifest(sweep_path + ".manifest", "sweep", params, [sweep_path, sup_path])
    for sup in result.sup_rows():
        print(
            "%s n=%d: sup|error| %.6g (stderr %.3g at K=%g)"
            % (sup.scheme, sup.n, sup.sup_error, sup.stderr, sup.strike)
        )
    print("wrote %s and %s" % (sweep_path, sup_path))
    return 0


def cmd_check(args, parser) -> int:
    try:
        pre = preset(args.model, **_parse_params(args.param))
    except ContractViolation as exc:
        parser.error("argument --model: %s" % exc)
    points = [pre.x0]
    if args.points > 0:
        points.extend(pre.sample_points(args.points, seed=args.seed))
    report = commutativity_check(pre.model, points)
    print("model: %s" % pre.id)
    print("commutative: %s" % ("true" if report.commutative else "false"))
    print(
        "max defect: %.10g at %s (tolerance %.3g, %d points)"
        % (report.max_defect, _fmt_state(report.witness_point), report.tolerance, report.sample_count)
    )
    phi3_max = 0.0
    witness = points[0]
    for p in points:
        c = phi3_coefficient_tensor(pre.model, np.asarray(p, dtype=float))
        worst = float(np.max(np.abs(c)))
        if worst > phi3_max:
            phi3_max, witness = worst, p
    print("phi3 max |entry|: %.10g at %s" % (phi3_max, _fmt_state(witness)))
    return 0


def cmd_convergence(args, parser) -> int:
    if args.inputs:
        sup_rows = []
        for path in args.inputs:
            sup_rows.extend(read_sup_csv(path))
    else:
        if args.model is None:
            parser.error("argument --in: provide summary CSVs or --model to run a sweep inline")
        settings, bench, result = _run_sweep(args, parser)
        sup_rows = result.sup_rows_with_benchmark(bench)
    schemes = []
    for row in sup_rows:
        if row.scheme not in schemes:
            schemes.append(row.scheme)
    fits = {}
    for scheme in schemes:
        pairs = [(row.n, row.sup_error) for row in sup_rows if row.scheme == scheme]
        try:
            fit = convergence_order(pairs)
        except ContractViolation as exc:
            print("%s: no order fit (%s)" % (scheme, exc))
            continue
        fits[scheme] = fit
        print(
            "%s: fitted weak order %.3f (intercept %.3f, %d points, %d excluded)"
            % (scheme, -fit.slope, fit.intercept, fit.points_used, fit.points_excluded)
        )
    if "em" in schemes and "extended" in schemes:
        by_key = {(r.scheme, r.n): r.sup_error for r in sup_rows}
        for n in sorted({r.n for r in sup_rows}):
            em = by_key.get(("em", n))
            ext = by_key.get(("extended", n))
            if em and ext and em > 0:
                print("n=%d: extended/em sup-error ratio %.4f" % (n, ext / em))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("scheme,order,intercept,points_used,points_excluded\n")
            for scheme, fit in fits.items():
                fh.write(
                    "%s,%s,%s,%d,%d\n"
                    % (
                        scheme,
                        repr(-fit.slope),
                        repr(fit.intercept),
                        fit.points_used,
                        fit.points_excluded,
                    )
                )
        write_manifest(
            args.out + ".manifest",
            "convergence",
            {"inputs": ";".join(args.inputs or []), "out": args.out},
            [args.out],
        )
    return 0


def cmd_benchmark(args, parser) -> int:
    pre = preset(args.model, **_parse_params(args.param))
    if pre.average_coordinate is None:
        parser.error("argument --model: %r has no averaging coordinate to price" % args.model)
    kind = _resolve_payoff_kind(args, args.model)
    strikes_text = args.strikes or _DEFAULT_STRIKES.get(args.model, "10:200:10")
    try:
        strikes = _parse_strikes(strikes_text)
    except ValueError as exc:
        parser.error("argument --strikes: %s" % exc)
    paths = args.paths
    if paths is None:
        paths = 10_000_000 if args.paper_scale else 1_000_000
    n = args.n
    if n is None:
        n = _FULL_SCALE_BENCH_N.get(args.model, 1024) if args.paper_scale else 256
    table = compute_benchmark(
        pre,
        kind,
        strikes,
        paths,
        n,
        args.seed,
        cache_dir=args.cache_dir,
        threads=args.threads,
    )
    print("benchmark %s (%s), M=%d n=%d seed=%d" % (pre.id, kind.value, paths, n, args.seed))
    for strike in sorted(table.values):
        print(
            "K=%g: %.10g +- %.3g" % (strike, table.values[strike], table.stderrs[strike])
        )
    if args.out:
        from .experiments import _write_benchmark_csv

        _write_benchmark_csv(args.out, table)
        params = {
            "param": ";".join(args.param or []),
            "model": args.model,
            "payoff": kind.value,
            "strikes": strikes_text,
            "paths": paths,
            "n": n,
            "seed": args.seed,
            "mode": "qmc" if args.qmc else "mc",
            "threads": args.threads,
            "cache_dir": args.cache_dir,
            "out": args.out,
        }
        write_manifest(args.out + ".manifest", "benchmark", params, [args.out])
    return 0


_COMMANDS = {
    "price": cmd_price,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "convergence": cmd_convergence,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except (ContractViolation, EstimationError, NoiseBudgetExceeded, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
