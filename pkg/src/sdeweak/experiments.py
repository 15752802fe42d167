"""Estimation engine: payoffs, Monte-Carlo/QMC estimators, benchmarks,
strike sweeps, convergence-order fits, and the shrinking-noise study.

The experiment surfaces mirror a standard bias study: simulate terminals
under each scheme with common random numbers, price a payoff family over a
strike grid, subtract a high-resolution benchmark, and track the
sup-over-strikes error per (scheme, n).

Determinism contract: path p of replication r is a pure function of
(seed, r, p); per-path payoffs are collected into a path-indexed array and
reduced with numpy's pairwise summation in that fixed order, so published
estimates are bit-identical for any worker count.
"""

from __future__ import annotations

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .model import ContractViolation
from .noise import NoiseKind, NoiseSource
from .presets import PresetModel
from .schemes import (
    EMPTY_STATS,
    BatchStats,
    SchemeKind,
    SimConfig,
    simulate_terminal_batch,
)

_CHUNK = 1 << 16


class EstimationError(RuntimeError):
    """A run produced no usable estimate (e.g. every path went non-finite)."""


class PayoffKind(Enum):
    ASIAN_CALL = "asian-call"
    ASIAN_DIGITAL = "asian-digital"


@dataclass(frozen=True)
class Payoff:
    """Discounted functional of the terminal state's running-average coordinate.

    Evaluates ``scale * max(A_T/T - K, 0)`` for calls and
    ``scale * 1[A_T/T >= K]`` for digitals, where ``scale`` is the discount
    factor resp. the coupon.
    """

    kind: PayoffKind
    strike: float
    horizon: float
    scale: float
    average_coordinate: int

    def __post_init__(self):
        if self.strike < 0.0:
            raise ContractViolation("strike must be nonnegative")
        if self.horizon <= 0.0:
            raise ContractViolation("payoff horizon must be positive")
        if self.average_coordinate < 0:
            raise ContractViolation("average_coordinate must be a valid state index")

    def evaluate(self, terminals: np.ndarray) -> np.ndarray:
        average = terminals[..., self.average_coordinate] / self.horizon
        if self.kind is PayoffKind.ASIAN_CALL:
            return self.scale * np.maximum(average - self.strike, 0.0)
        return self.scale * (average >= self.strike).astype(float)


def make_payoff(preset: PresetModel, kind: PayoffKind, strike: float) -> Payoff:
    """Payoff wired with the preset's averaging coordinate and scale."""
    if preset.average_coordinate is None:
        raise ContractViolation(
            "preset %r has no running-average coordinate" % preset.id
        )
    scale = preset.discount if kind is PayoffKind.ASIAN_CALL else preset.coupon
    return Payoff(
        kind=kind,
        strike=strike,
        horizon=preset.horizon,
        scale=scale,
        average_coordinate=preset.average_coordinate,
    )


@dataclass(frozen=True)
class NoisePlan:
    """Noise family for an estimate: kind, seed, and replication count."""

    kind: NoiseKind
    seed: int
    replications: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ContractViolation("replications must be >= 1")

    @staticmethod
    def mc(seed: int) -> "NoisePlan":
        return NoisePlan(NoiseKind.PSEUDO, seed, 1)

    @staticmethod
    def qmc(seed: int, replications: int = 16) -> "NoisePlan":
        return NoisePlan(NoiseKind.SOBOL, seed, replications)

    def source(self, dims_per_path: int, replication: int) -> NoiseSource:
        return NoiseSource(self.kind, self.seed, dims_per_path, replication)


@dataclass(frozen=True)
class EstimateResult:
    mean: float
    stderr: float
    paths_total: int
    paths_invalid: int
    replications: int


def _paths_per_replication(paths: int, replications: int) -> int:
    per = paths // replications
    if per < 1 or per * replications != paths:
        raise ContractViolation(
            "total path count %d must be a positive multiple of %d replications"
            % (paths, replications)
        )
    return per


def _simulate_replication(
    model, cfg: SimConfig, source: NoiseSource, paths: int, threads: int
) -> tuple[np.ndarray, BatchStats]:
    out = np.empty((paths, model.state_dim))
    ranges = [(lo, min(lo + _CHUNK, paths)) for lo in range(0, paths, _CHUNK)]

    def work(bounds):
        lo, hi = bounds
        terminals, stats = simulate_terminal_batch(model, cfg, source, lo, hi - lo)
        out[lo:hi] = terminals
        return stats

    if threads <= 1 or len(ranges) == 1:
        stats_list = [work(r) for r in ranges]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats_list = list(pool.map(work, ranges))
    total = EMPTY_STATS
    for st in stats_list:
        total = total.merge(st)
    return out, total


def simulate_replications(
    model,
    cfg: SimConfig,
    plan: NoisePlan,
    paths: int,
    threads: int = 1,
) -> tuple[list[np.ndarray], BatchStats]:
    """Terminal states per replication (list of (paths/reps, N) arrays)."""
    per = _paths_per_replication(paths, plan.replications)
    dims = cfg.n * model.noise_dim
    terminals = []
    stats = EMPTY_STATS
    for rep in range(plan.replications):
        term, st = _simulate_replication(model, cfg, plan.source(dims, rep), per, threads)
        terminals.append(term)
        stats = stats.merge(st)
    return terminals, stats


def _reduce_payoff(
    terminals_per_rep: list[np.ndarray], payoff: Payoff
) -> tuple[float, float, int]:
    """(mean, stderr, invalid count) for one payoff over all replications."""
    rep_means = []
    invalid = 0
    single_values = None
    for terminals in terminals_per_rep:
        valid = np.isfinite(terminals).all(axis=1)
        invalid += int(terminals.shape[0] - np.sum(valid))
        values = payoff.evaluate(terminals)[valid]
        if values.size == 0:
            continue
        rep_means.append(float(np.sum(values) / values.size))
        single_values = values
    if not rep_means:
        raise EstimationError("all simulated paths were invalid")
    if len(terminals_per_rep) == 1:
        values = single_values
        mean = rep_means[0]
        stderr = (
            float(np.std(values, ddof=1) / math.sqrt(values.size))
            if values.size > 1
            else 0.0
        )
        return mean, stderr, invalid
    means = np.asarray(rep_means)
    mean = float(np.sum(means) / means.size)
    stderr = (
        float(np.std(means, ddof=1) / math.sqrt(means.size)) if means.size > 1 else 0.0
    )
    return mean, stderr, invalid


def estimate(
    model,
    cfg: SimConfig,
    payoff: Payoff,
    plan: NoisePlan,
    paths: int,
    threads: int = 1,
) -> EstimateResult:
    """Monte-Carlo / QMC estimate of E[payoff(terminal state)].

    ``paths`` is the total path budget, split evenly over the plan's
    replications.  With one replication the standard error comes from the
    path variance; with several it comes from the spread of replication
    means, which is the honest choice for deterministic point sets.
    """
    if paths < 2:
        raise ContractViolation("need at least 2 paths for an estimate")
    model = _unwrap(model)
    terminals, _ = simulate_replications(model, cfg, plan, paths, threads)
    mean, stderr, invalid = _reduce_payoff(terminals, payoff)
    return EstimateResult(mean, stderr, paths, invalid, plan.replications)


def _unwrap(model):
    return model.model if isinstance(model, PresetModel) else model


# ---------------------------------------------------------------------------
# Benchmarks
# ---------------------------------------------------------------------------

BENCHMARK_SCHEME = SchemeKind.EM


@dataclass(frozen=True)
class BenchmarkTable:
    """High-resolution reference values per strike, with provenance."""

    values: dict
    stderrs: dict
    provenance: dict

    def require(self, strike: float) -> float:
        if strike not in self.values:
            raise EstimationError("no benchmark value for strike %r" % strike)
        return self.values[strike]


def benchmark_cache_key(
    preset: PresetModel,
    payoff_kind: PayoffKind,
    strikes: Sequence[float],
    seed: int,
    paths: int,
    n: int,
) -> str:
    text = "|".join(
        [
            preset.id,
            preset.params_key(),
            payoff_kind.value,
            ",".join(repr(float(k)) for k in strikes),
            "seed=%d" % seed,
            "M=%d" % paths,
            "n=%d" % n,
            "scheme=%s" % BENCHMARK_SCHEME.value,
        ]
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def compute_benchmark(
    preset: PresetModel,
    payoff_kind: PayoffKind,
    strikes: Sequence[float],
    paths: int,
    n: int,
    seed: int,
    cache_dir: str | None = None,
    threads: int = 1,
) -> BenchmarkTable:
    """EM-scheme pseudo-random MC reference per strike, cached on disk.

    Repeated calls with the same key reread the cache file, so downstream
    sweeps see bitwise-identical reference values.
    """
    key = benchmark_cache_key(preset, payoff_kind, strikes, seed, paths, n)
    path = os.path.join(cache_dir, "bench_%s.csv" % key) if cache_dir else None
    if path and os.path.exists(path):
        return _read_benchmark_csv(path)
    cfg = SimConfig(T=preset.horizon, n=n, x0=preset.x0, scheme=BENCHMARK_SCHEME)
    plan = NoisePlan.mc(seed)
    terminals, _ = simulate_replications(preset.model, cfg, plan, paths, threads)
    values, stderrs = {}, {}
    for strike in strikes:
        payoff = make_payoff(preset, payoff_kind, strike)
        mean, stderr, _ = _reduce_payoff(terminals, payoff)
        values[float(strike)] = mean
        stderrs[float(strike)] = stderr
    provenance = {
        "model": preset.id,
        "params": preset.params_key(),
        "payoff": payoff_kind.value,
        "scheme": BENCHMARK_SCHEME.value,
        "seed": str(seed),
        "M": str(paths),
        "n": str(n),
        "key": key,
    }
    table = BenchmarkTable(values, stderrs, provenance)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        _write_benchmark_csv(path, table)
    return table


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_benchmark_csv(path: str, table: BenchmarkTable) -> None:
    prov = " ".join("%s=%s" % (k, v) for k, v in sorted(table.provenance.items()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# benchmark %s\n" % prov)
        fh.write("K,value,stderr\n")
        for strike in sorted(table.values):
            fh.write(
                "%s,%s,%s\n"
                % (
                    _format_float(strike),
                    _format_float(table.values[strike]),
                    _format_float(table.stderrs[strike]),
                )
            )


def _read_benchmark_csv(path: str) -> BenchmarkTable:
    values, stderrs, provenance = {}, {}, {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for chunk in line.lstrip("# ").split()[1:]:
                    if "=" in chunk:
                        k, v = chunk.split("=", 1)
                        provenance[k] = v
                continue
            if line.startswith("K,"):
                continue
            k, v, s = line.split(",")
            values[float(k)] = float(v)
            stderrs[float(k)] = float(s)
    return BenchmarkTable(values, stderrs, provenance)


# ---------------------------------------------------------------------------
# Strike sweeps
# ---------------------------------------------------------------------------

SWEEP_HEADER = "scheme,n,K,M,estimate,stderr,benchmark,error"
SUP_HEADER = "scheme,n,M,sup_error,stderr,K,benchmark_stderr"


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    n: int
    strike: float
    paths: int
    estimate: float
    stderr: float
    benchmark: float
    error: float


@dataclass(frozen=True)
class SupRow:
    """Sup-over-strikes absolute error for one (scheme, n)."""

    scheme: str
    n: int
    paths: int
    sup_error: float
    stderr: float
    strike: float
    benchmark_stderr: float


@dataclass
class SweepResult:
    rows: list

    def sup_rows(self) -> list:
        keys = []
        for row in self.rows:
            key = (row.scheme, row.n)
            if key not in keys:
                keys.append(key)
        out = []
        for scheme, n in keys:
            group = [r for r in self.rows if r.scheme == scheme and r.n == n]
            best = max(group, key=lambda r: abs(r.error))
            out.append(
                SupRow(
                    scheme=scheme,
                    n=n,
                    paths=best.paths,
                    sup_error=abs(best.error),
                    stderr=best.stderr,
                    strike=best.strike,
                    benchmark_stderr=0.0,
                )
            )
        return out

    def sup_rows_with_benchmark(self, bench: BenchmarkTable) -> list:
        out = []
        for row in self.sup_rows():
            out.append(
                SupRow(
                    scheme=row.scheme,
                    n=row.n,
                    paths=row.paths,
                    sup_error=row.sup_error,
                    stderr=row.stderr,
                    strike=row.strike,
                    benchmark_stderr=bench.stderrs.get(row.strike, 0.0),
                )
            )
        return out


def strike_sweep(
    preset: PresetModel,
    schemes: Sequence[SchemeKind],
    n_values: Sequence[int],
    strikes: Sequence[float],
    paths: int,
    plan: NoisePlan,
    bench: BenchmarkTable,
    payoff_kind: PayoffKind = PayoffKind.ASIAN_CALL,
    threads: int = 1,
) -> SweepResult:
    """Estimate every (scheme, n, strike) cell against the benchmark.

    Within one n, all schemes consume identical increments per (path, step)
    (the noise plan is a pure function of (seed, replication, path)), so
    scheme differences isolate discretisation bias.
    """
    for strike in strikes:
        bench.require(float(strike))
    rows = []
    for n in n_values:
        for scheme in schemes:
            cfg = SimConfig(T=preset.horizon, n=n, x0=preset.x0, scheme=scheme)
            terminals, _ = simulate_replications(preset.model, cfg, plan, paths, threads)
            for strike in strikes:
                payoff = make_payoff(preset, payoff_kind, strike)
                mean, stderr, _ = _reduce_payoff(terminals, payoff)
                reference = bench.values[float(strike)]
                rows.append(
                    SweepRow(
                        scheme=scheme.value,
                        n=n,
                        strike=float(strike),
                        paths=paths,
                        estimate=mean,
                        stderr=stderr,
                        benchmark=reference,
                        error=reference - mean,
                    )
                )
    return SweepResult(rows)


def write_sweep_csv(path: str, result: SweepResult) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for r in result.rows:
            fh.write(
                "%s,%d,%s,%d,%s,%s,%s,%s\n"
                % (
                    r.scheme,
                    r.n,
                    _format_float(r.strike),
                    r.paths,
                    _format_float(r.estimate),
                    _format_float(r.stderr),
                    _format_float(r.benchmark),
                    _format_float(r.error),
                )
            )


def read_sweep_csv(path: str) -> SweepResult:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != SWEEP_HEADER:
            raise EstimationError(
                "unexpected sweep CSV header %r in %s (want %r)"
                % (header, path, SWEEP_HEADER)
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            scheme, n, k, m, est, se, bench, err = line.split(",")
            rows.append(
                SweepRow(
                    scheme=scheme,
                    n=int(n),
                    strike=float(k),
                    paths=int(m),
                    estimate=float(est),
                    stderr=float(se),
                    benchmark=float(bench),
                    error=float(err),
                )
            )
    return SweepResult(rows)


def write_sup_csv(path: str, sup_rows: Iterable[SupRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUP_HEADER + "\n")
        for r in sup_rows:
            fh.write(
                "%s,%d,%d,%s,%s,%s,%s\n"
                % (
                    r.scheme,
                    r.n,
                    r.paths,
                    _format_float(r.sup_error),
                    _format_float(r.stderr),
                    _format_float(r.strike),
                    _format_float(r.benchmark_stderr),
                )
            )


def read_sup_csv(path: str) -> list:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != SUP_HEADER:
            raise EstimationError(
                "unexpected summary CSV header %r in %s (want %r)"
                % (header, path, SUP_HEADER)
            )
        for line in fh:
            line = line.strip()
            if not line:
                continue
            scheme, n, m, sup, se, k, bse = line.split(",")
            rows.append(
                SupRow(
                    scheme=scheme,
                    n=int(n),
                    paths=int(m),
                    sup_error=float(sup),
                    stderr=float(se),
                    strike=float(k),
                    benchmark_stderr=float(bse),
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Convergence-order fit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderFit:
    """Least-squares fit of log2 |error| against log2 n."""

    slope: float
    intercept: float
    points_used: int
    points_excluded: int


def convergence_order(errors: Sequence[tuple]) -> OrderFit:
    """Fit the weak-order slope from (n, sup_error) pairs.

    Non-positive errors (possible through estimator noise) are excluded and
    counted; at least three usable points with distinct n are required.
    """
    usable = [(n, e) for n, e in errors if e > 0.0]
    excluded = len(list(errors)) - len(usable)
    if len({n for n, _ in usable}) < 3:
        raise ContractViolation(
            "convergence fit needs at least 3 distinct n values with positive errors"
        )
    x = np.log2([float(n) for n, _ in usable])
    y = np.log2([float(e) for _, e in usable])
    slope, intercept = np.polyfit(x, y, 1)
    return OrderFit(float(slope), float(intercept), len(usable), excluded)


# ---------------------------------------------------------------------------
# Shrinking-noise study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonStudyRow:
    eps: float
    scheme: str
    sup_error: float
    stderr: float
    benchmark_stderr: float


@dataclass
class EpsilonStudyResult:
    rows: list

    def sup_error(self, eps: float, scheme: str) -> float:
        for r in self.rows:
            if r.eps == eps and r.scheme == scheme:
                return r.sup_error
        raise KeyError((eps, scheme))

    def ratio(self, eps: float, num_scheme: str = "extended", den_scheme: str = "em") -> float:
        return self.sup_error(eps, num_scheme) / self.sup_error(eps, den_scheme)


def epsilon_study(
    make_preset,
    eps_values: Sequence[float],
    n: int,
    strikes: Sequence[float],
    paths: int,
    plan: NoisePlan,
    payoff_kind: PayoffKind = PayoffKind.ASIAN_CALL,
    benchmark_paths: int = 1_000_000,
    benchmark_n: int = 256,
    benchmark_seed: int = 90210,
    cache_dir: str | None = None,
    threads: int = 1,
    schemes: Sequence[SchemeKind] = (
        SchemeKind.EM,
        SchemeKind.TRUNCATED_MILSTEIN,
        SchemeKind.EXTENDED_MILSTEIN,
    ),
) -> EpsilonStudyResult:
    """Sup-over-strikes error per scheme as the diffusion scale shrinks.

    ``make_preset(eps)`` must return the small-diffusion preset for that
    eps.  Each eps uses the same noise plan (common random numbers across
    both eps values and schemes) and its own benchmark.
    """
    for eps in eps_values:
        if not 0.0 < eps < 1.0:
            raise ContractViolation("eps values must lie in (0, 1)")
    rows = []
    for eps in eps_values:
        pre = make_preset(eps)
        bench = compute_benchmark(
            pre,
            payoff_kind,
            strikes,
            benchmark_paths,
            benchmark_n,
            benchmark_seed,
            cache_dir=cache_dir,
            threads=threads,
        )
        sweep = strike_sweep(
            pre,
            schemes,
            [n],
            strikes,
            paths,
            plan,
            bench,
            payoff_kind=payoff_kind,
            threads=threads,
        )
        for sup in sweep.sup_rows_with_benchmark(bench):
            rows.append(
                EpsilonStudyRow(
                    eps=float(eps),
                    scheme=sup.scheme,
                    sup_error=sup.sup_error,
                    stderr=sup.stderr,
                    benchmark_stderr=sup.benchmark_stderr,
                )
            )
    return EpsilonStudyResult(rows)
