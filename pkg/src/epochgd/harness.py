"""Experiment orchestration: configs, seeded trial batches, rate sweeps and output files.

Trial ``i`` of a batch always uses ``numpy.random.default_rng(base_seed + i)``, so
any row of an output file can be replayed on its own.
"""
from __future__ import annotations

import csv
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import checks
from .core import Problem
from .errors import ConfigError, InsufficientPoints
from .optimizers import (
    AVERAGE,
    EXPECTATION,
    HIGH_PROB,
    ITERATE_RULES,
    BudgetPreconditionWarning,
    baseline_sgd_batch,
    build_epoch_schedule,
    run_schedule_batch,
)
from .problems import load_libsvm, make_quadratic, make_svm, reference_optimum, toy_dataset
from .stats import fit_loglog_slope, mean_ci, stderr

ALGORITHMS = ("epoch-gd", "epoch-gd-hp", "baseline-sgd")
CSV_COLUMNS = ("trial", "k", "V_k", "eta_k", "T_k", "delta_k", "cumulative_updates", "final_suboptimality")
AGGREGATE_COLUMNS = ("k", "V_k", "trials", "mean_delta_k", "stderr_delta_k", "ci95_halfwidth", "halving_ok")
SEED_ENV = "EPOCHGD_SEED"

DEFAULT_QUADRATIC = {
    "family": "quadratic", "dim": 5, "a": 1.0, "x_star": [0.1] * 5, "noise_sigma": 0.5,
    "noise_bound": 2.0, "domain_radius": 0.5, "M": 4.0, "G": 4.0,
}


@dataclass
class ExperimentConfig:
    problem: dict = field(default_factory=lambda: dict(DEFAULT_QUADRATIC))
    algorithm: str = "epoch-gd"
    epsilon: float = 2.0 ** -6
    delta: Optional[float] = None
    trials: int = 100
    base_seed: int = 0
    iterate_rule: str = AVERAGE
    radius_rule: str = "analysis"
    baseline_T: Optional[int] = None
    x1: Optional[list] = None
    jobs: int = 1
    out: Optional[str] = None
    format: str = "csv"
    verify: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.algorithm == "epoch-gd-hp":
            if self.delta is None or not 0 < self.delta < 1:
                raise ConfigError("epoch-gd-hp needs delta in (0, 1)")
        if not (isinstance(self.trials, int) and self.trials >= 1):
            raise ConfigError(f"trials must be a positive integer, got {self.trials!r}")
        if not isinstance(self.base_seed, int) or not 0 <= self.base_seed < 2 ** 64:
            raise ConfigError(f"base_seed must be an unsigned 64-bit integer, got {self.base_seed!r}")
        if self.iterate_rule not in ITERATE_RULES:
            raise ConfigError(f"iterate_rule must be one of {ITERATE_RULES}")
        if self.radius_rule not in ("analysis", "literal"):
            raise ConfigError("radius_rule must be 'analysis' or 'literal'")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if not (isinstance(self.jobs, int) and self.jobs >= 1):
            raise ConfigError("jobs must be a positive integer")
        if not isinstance(self.problem, dict) or self.problem.get("family") not in ("quadratic", "svm"):
            raise ConfigError("problem.family must be 'quadratic' or 'svm'")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | None, overrides: dict | None = None, env=os.environ) -> ExperimentConfig:
    """Defaults < JSON file < $EPOCHGD_SEED (only when no seed was given) < explicit overrides."""
    data: dict = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    if "base_seed" not in data and "base_seed" not in overrides and env.get(SEED_ENV):
        try:
            data["base_seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if "problem" in overrides and "problem" in data:
        overrides["problem"] = {**data["problem"], **overrides["problem"]}
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# problem construction


def build_problem(desc: dict) -> Problem:
    desc = dict(desc)
    family = desc.pop("family")
    try:
        if family == "quadratic":
            return make_quadratic(**desc)
        if family == "svm":
            path = desc.pop("path", None)
            ref_tol = desc.pop("reference_tol", 1e-3)
            data = toy_dataset() if path in (None, "toy") else load_libsvm(path)
            prob = make_svm(data, **desc)
            return reference_optimum(prob, ref_tol).problem
    except TypeError as exc:
        raise ConfigError(f"bad {family} parameters: {exc}") from None
    raise ConfigError(f"unknown problem family {family!r}")


def start_point(problem: Problem, config: ExperimentConfig) -> np.ndarray:
    if config.x1 is not None:
        return np.asarray(config.x1, dtype=float)
    return problem.meta["default_start"]


def make_schedule(problem: Problem, config: ExperimentConfig):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetPreconditionWarning)
        if config.algorithm == "epoch-gd-hp":
            return build_epoch_schedule(problem.spec, config.epsilon, HIGH_PROB, config.delta,
                                        radius_rule=config.radius_rule)
        return build_epoch_schedule(problem.spec, config.epsilon, EXPECTATION)


# ---------------------------------------------------------------------------
# running


@dataclass
class Row:
    trial: int
    k: int
    V_k: Optional[float]
    eta_k: Optional[float]
    T_k: Optional[int]
    delta_k: Optional[float]
    cumulative_updates: int
    final_suboptimality: Optional[float]

    def as_tuple(self):
        return tuple(getattr(self, c) for c in CSV_COLUMNS)


def trace_rows(trial: int, trace, M: float, baseline: bool = False) -> list[Row]:
    """One row per epoch plus a terminal row for the returned point x_1^{K+1}.

    ``cumulative_updates`` counts the updates spent before the row's point was
    reached.  An empty schedule yields only the terminal row, with V_1 = M.
    """
    rows = []
    used = 0
    for rec in trace.per_epoch:
        rows.append(Row(trial, rec.k, rec.V, rec.eta, rec.T, rec.delta_k, used, trace.final_suboptimality))
        used += rec.T
    if baseline:
        last_k, V_final = 2, None
    elif trace.per_epoch:
        last_k, V_final = trace.per_epoch[-1].k + 1, trace.per_epoch[-1].V / 2
    else:
        last_k, V_final = 1, M
    rows.append(Row(trial, last_k, V_final, None, None, trace.final_suboptimality, used,
                    trace.final_suboptimality))
    return rows


def _run_trials(config_dict: dict, trial_ids: Sequence[int]):
    config = ExperimentConfig.from_dict(config_dict)
    problem = build_problem(config.problem)
    domain = problem.domain
    x1 = start_point(problem, config)
    seeds = [config.base_seed + i for i in trial_ids]
    rngs = [np.random.default_rng(s) for s in seeds]
    if config.algorithm == "baseline-sgd":
        T = config.baseline_T or max(1, make_schedule(problem, config).total_updates)
        traces = baseline_sgd_batch(problem, domain, x1, T, rngs, verify=config.verify, seeds=seeds)
    else:
        schedule = make_schedule(problem, config)
        traces = run_schedule_batch(problem, domain, x1, schedule, rngs, config.iterate_rule,
                                    verify=config.verify, seeds=seeds)
    baseline = config.algorithm == "baseline-sgd"
    return [(i, seed, trace_rows(i, tr, problem.spec.M, baseline), tr.final_point.tolist(),
             tr.total_gradient_updates)
            for i, seed, tr in zip(trial_ids, seeds, traces)]


@dataclass
class TrialSummary:
    trial: int
    seed: int
    total_gradient_updates: int
    final_suboptimality: Optional[float]
    final_point: list


@dataclass
class TrialBatch:
    config: ExperimentConfig
    rows: list
    trials: list
    aggregates: list
    summary: dict


def compute_aggregates(rows: Sequence[Row], epsilon: float, trials: int) -> tuple[list, dict]:
    """Per-epoch mean/stderr/CI of delta_k and final-suboptimality statistics, from rows only."""
    by_k: dict[int, list[Row]] = {}
    for r in sorted(rows, key=lambda r: (r.trial, r.k)):
        by_k.setdefault(r.k, []).append(r)
    aggregates = []
    for k in sorted(by_k):
        rs = by_k[k]
        vals = [r.delta_k for r in rs if r.delta_k is not None]
        V = rs[0].V_k
        mean = float(np.mean(vals)) if vals else None
        se = stderr(vals) if len(vals) >= 2 else None
        half = mean_ci(vals, 0.95)[1] if len(vals) >= 2 else None
        ok = None if (mean is None or se is None or V is None) else bool(mean - 2 * se <= V)
        aggregates.append({"k": k, "V_k": V, "trials": len(rs), "mean_delta_k": mean, "stderr_delta_k": se,
                           "ci95_halfwidth": half, "halving_ok": ok})
    finals = {}
    for r in rows:
        finals.setdefault(r.trial, r.final_suboptimality)
    fvals = [finals[t] for t in sorted(finals) if finals[t] is not None]
    summary = {"trials": trials, "epsilon": epsilon}
    if fvals:
        summary["mean_final_suboptimality"] = float(np.mean(fvals))
        summary["ci95_halfwidth"] = mean_ci(fvals, 0.95)[1] if len(fvals) >= 2 else None
        summary["failures"] = int(sum(v > epsilon for v in fvals))
        summary["failure_fraction"] = summary["failures"] / len(fvals)
    return aggregates, summary


def run_experiment(config: ExperimentConfig, write: bool = True) -> TrialBatch:
    config.validate()
    ids = list(range(config.trials))
    cfg = config.to_dict()
    if config.jobs > 1 and config.trials > 1:
        chunks = [c.tolist() for c in np.array_split(np.array(ids), min(config.jobs, config.trials)) if len(c)]
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            parts = list(pool.map(_run_trials, [cfg] * len(chunks), chunks))
        results = [r for part in parts for r in part]
    else:
        results = _run_trials(cfg, ids)
    results.sort(key=lambda r: r[0])
    rows = [row for r in results for row in r[2]]
    trials = [TrialSummary(i, seed, upd, r[-1].final_suboptimality, pt) for i, seed, r, pt, upd in results]
    aggregates, summary = compute_aggregates(rows, config.epsilon, config.trials)
    summary["algorithm"] = config.algorithm
    summary["total_gradient_updates"] = trials[0].total_gradient_updates
    batch = TrialBatch(config, rows, trials, aggregates, summary)
    if write and config.out:
        write_batch(batch, config.out, config.format)
    return batch


# ---------------------------------------------------------------------------
# serialisation


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def rows_to_csv(rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([fmt(v) for v in r.as_tuple()])
    return buf.getvalue()


def aggregates_to_csv(aggregates: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for a in aggregates:
        w.writerow([fmt(a[c]) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def parse_rows_csv(text: str) -> list[Row]:
    def num(s, conv):
        return None if s == "" else conv(s)

    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    return [Row(int(d["trial"]), int(d["k"]), num(d["V_k"], float), num(d["eta_k"], float), num(d["T_k"], int),
                num(d["delta_k"], float), int(d["cumulative_updates"]), num(d["final_suboptimality"], float))
            for d in reader]


def batch_to_json(batch: TrialBatch) -> str:
    doc = {
        "config": batch.config.to_dict(),
        "columns": list(CSV_COLUMNS),
        "rows": [list(r.as_tuple()) for r in batch.rows],
        "trials": [asdict(t) for t in batch.trials],
        "aggregates": batch.aggregates,
        "summary": batch.summary,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def aggregate_path(out: str) -> str:
    root, ext = os.path.splitext(out)
    return f"{root}.aggregate{ext or '.csv'}"


def write_batch(batch: TrialBatch, out: str, format: str = "csv") -> None:
    if format == "json":
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(batch_to_json(batch))
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(batch.rows))
    with open(aggregate_path(out), "w", encoding="utf-8", newline="") as fh:
        fh.write(aggregates_to_csv(batch.aggregates))


# ---------------------------------------------------------------------------
# rate sweep


@dataclass
class SweepReport:
    points: list
    slope: float
    slope_range: tuple = (-1.25, -0.75)

    @property
    def ok(self) -> bool:
        return self.slope_range[0] <= self.slope <= self.slope_range[1]


def run_rate_sweep(config: ExperimentConfig, epsilons: Sequence[float],
                   runner: Callable[[float], tuple[int, float]] | None = None) -> SweepReport:
    """Mean final suboptimality against total updates for each epsilon, with its log-log slope.

    ``runner`` maps epsilon to (total updates, mean suboptimality); the default runs a batch.
    """
    eps = sorted(set(float(e) for e in epsilons), reverse=True)
    if len(eps) < 3:
        raise InsufficientPoints("a rate sweep needs at least three distinct epsilons")

    def default_runner(e):
        cfg = ExperimentConfig.from_dict({**config.to_dict(), "epsilon": e, "out": None})
        batch = run_experiment(cfg, write=False)
        return batch.summary["total_gradient_updates"], batch.summary["mean_final_suboptimality"]

    runner = runner or default_runner
    points = []
    for e in eps:
        updates, err = runner(e)
        points.append({"epsilon": e, "total_updates": int(updates), "mean_suboptimality": float(err)})
    slope = fit_loglog_slope([(p["total_updates"], p["mean_suboptimality"]) for p in points])
    return SweepReport(points, slope)


# ---------------------------------------------------------------------------
# invariant suite


def harness_checks(scale: float) -> list:
    out = []
    cfg = ExperimentConfig(trials=max(4, int(20 * scale)), epsilon=2.0 ** -3, base_seed=11)
    a = run_experiment(cfg, write=False)
    b = run_experiment(cfg, write=False)
    text = rows_to_csv(a.rows)
    out.append(checks.CheckResult("harness", "csv-determinism", text == rows_to_csv(b.rows)))
    agg, summ = compute_aggregates(parse_rows_csv(text), cfg.epsilon, cfg.trials)
    out.append(checks.CheckResult("harness", "aggregates-recomputable",
                                  agg == a.aggregates and all(summ[k] == a.summary[k] for k in summ)))
    one = run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "trials": 1, "base_seed": a.trials[2].seed}),
                         write=False)
    replay = [r for r in a.rows if r.trial == 2]
    same = [r.as_tuple()[1:] for r in one.rows] == [r.as_tuple()[1:] for r in replay]
    out.append(checks.CheckResult("harness", "seed-replay", same, "trial 2 replayed from its seed"))
    return out


def run_invariant_suite(scope: str = "all", scale: float = 1.0, fault: str | None = None):
    """Run the property checks; returns (results, all_ok)."""
    if scope == "harness":
        results = harness_checks(scale)
    else:
        results = checks.run_checks(scope, scale, fault)
        if scope == "all":
            results += harness_checks(scale)
    return results, all(r.ok for r in results)
