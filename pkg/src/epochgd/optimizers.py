"""Epoch-GD (in-expectation and high-probability forms) and a decaying-step baseline.

The drivers run any number of independent trials in lockstep: iterates are
stacked into an ``(n_trials, dim)`` array and every trial owns its generator.
Noise for a trial is drawn in fixed-size blocks whose boundaries depend only on
the epoch length, so a trial's trace is bit-identical whether it runs alone or
inside a batch.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import Domain, Problem, ProblemSpec, assert_norm_bound, row_norms, validate_problem
from .errors import BudgetPreconditionWarning, InfeasibleStart, InvalidDelta, MissingDelta, NonPositiveConstant
from .projections import intersection_with_ball

NOISE_BLOCK = 1024
FEASIBILITY_TOL = 1e-9

AVERAGE = "average"
UNIFORM_RANDOM = "uniform-random"
ITERATE_RULES = (AVERAGE, UNIFORM_RANDOM)

EXPECTATION = "expectation"
HIGH_PROB = "high-prob"


@dataclass(frozen=True)
class Epoch:
    k: int
    V: float
    eta: float
    T: int
    radius: Optional[float] = None


@dataclass(frozen=True)
class HighProbParams:
    delta: float
    delta_tilde: float


@dataclass(frozen=True)
class EpochSchedule:
    epochs: tuple
    k_total: int
    epsilon: float
    variant: str = EXPECTATION
    high_prob: Optional[HighProbParams] = None

    @property
    def total_updates(self) -> int:
        return sum(e.T for e in self.epochs)

    @property
    def final_target(self) -> float:
        """V_{k_total+1}, the bound certified for the returned point."""
        return self.epochs[-1].V / 2 if self.epochs else math.inf


def num_epochs(M: float, epsilon: float) -> int:
    """ceil(log2(M/eps)) clamped at 0, i.e. the least k >= 0 with M/2^k <= eps.

    Computed with exact power-of-two scaling so that M/eps = 2^j gives exactly j.
    """
    if not epsilon > 0:
        raise NonPositiveConstant("epsilon", epsilon)
    k = max(0, math.ceil(math.log2(M / epsilon)))
    while math.ldexp(M, -k) > epsilon:
        k += 1
    while k > 0 and math.ldexp(M, -(k - 1)) <= epsilon:
        k -= 1
    return k


def _exact_ceil_ratio(num: float, den: float) -> int:
    return math.ceil(Fraction(num) / Fraction(den))


def build_epoch_schedule(spec: ProblemSpec, epsilon: float, variant: str = EXPECTATION,
                         delta: Optional[float] = None, radius_rule: str = "analysis") -> EpochSchedule:
    """Per-epoch (V_k, eta_k, T_k) for either guarantee.

    expectation: eta_k = V_k/(4G^2), T_k = ceil(16 G^2 / (lambda V_k)).
    high-prob:   eta_k = V_k/(10G^2), T_k = ceil(100 G^2 ln(1/delta_tilde) / (lambda V_k)),
                 delta_tilde = delta / (4 k_total), plus a localisation radius per epoch.
    """
    validate_problem(spec)
    k_total = num_epochs(spec.M, epsilon)
    G2 = Fraction(spec.G) ** 2
    lam = spec.lambda_hk

    if variant == EXPECTATION:
        if delta is not None:
            raise ValueError("delta is only meaningful for the high-prob variant")
        epochs = []
        for k in range(1, k_total + 1):
            V = math.ldexp(spec.M, -(k - 1))
            T = math.ceil(16 * G2 / (Fraction(lam) * Fraction(V)))
            epochs.append(Epoch(k=k, V=V, eta=V / (4 * spec.G ** 2), T=T))
        ok = k_total <= 2 * spec.G ** 2 / (lam * epsilon)
        if not ok:
            warnings.warn(
                f"k_total={k_total} exceeds 2G^2/(lambda*eps); the 20G^2/(lambda*eps) budget is not certified",
                BudgetPreconditionWarning, stacklevel=2)
        return EpochSchedule(tuple(epochs), k_total, epsilon, variant)

    if variant == HIGH_PROB:
        if delta is None:
            raise MissingDelta("high-prob schedule needs delta")
        if not 0 < delta < 1:
            raise InvalidDelta(f"delta must lie in (0, 1), got {delta!r}")
        delta_tilde = delta / (4 * k_total) if k_total else delta
        log_term = math.log(1 / delta_tilde)
        epochs = []
        for k in range(1, k_total + 1):
            V = math.ldexp(spec.M, -(k - 1))
            T = math.ceil(100 * spec.G ** 2 * log_term / (lam * V))
            epochs.append(Epoch(k=k, V=V, eta=V / (10 * spec.G ** 2), T=T,
                                radius=localisation_radius(V, lam, radius_rule)))
        return EpochSchedule(tuple(epochs), k_total, epsilon, variant, HighProbParams(delta, delta_tilde))

    raise ValueError(f"unknown variant {variant!r}")


def localisation_radius(V: float, lambda_hk: float, rule: str = "analysis") -> float:
    """Radius of the ball around the epoch start used by the high-prob update.

    ``"analysis"`` gives sqrt(V/lambda), the distance bound implied by growth; ``"literal"``
    uses V itself (kept for comparison only).
    """
    if rule == "analysis":
        return math.sqrt(V / lambda_hk)
    if rule == "literal":
        return V
    raise ValueError(f"unknown radius rule {rule!r}")


def total_budget_bound(spec: ProblemSpec, epsilon: float) -> tuple[float, bool]:
    """(20 G^2/(lambda eps), whether ceil(log2(M/eps)) <= 2 G^2/(lambda eps))."""
    if not epsilon > 0:
        raise NonPositiveConstant("epsilon", epsilon)
    ratio = spec.G ** 2 / (spec.lambda_hk * epsilon)
    return 20 * ratio, num_epochs(spec.M, epsilon) <= 2 * ratio


def sharp_budget_bound(spec: ProblemSpec, epsilon: float) -> float:
    """A cap that always holds: 32 G^2/(lambda eps) + k_total.

    Follows from sum_k ceil(16 G^2 2^(k-1)/(lambda M)) <= 16 G^2 (2^K - 1)/(lambda M) + K
    together with 2^K < 2M/eps for K = ceil(log2(M/eps)).
    """
    return 32 * spec.G ** 2 / (spec.lambda_hk * epsilon) + num_epochs(spec.M, epsilon)


# ---------------------------------------------------------------------------
# traces


@dataclass
class InnerTrace:
    eta: float | np.ndarray
    T: int
    last_point: np.ndarray
    regret_sum: Optional[float] = None
    D: Optional[float] = None
    iterates: Optional[np.ndarray] = None

    @property
    def average_regret(self) -> Optional[float]:
        return None if self.regret_sum is None else self.regret_sum / self.T


@dataclass
class EpochRecord:
    k: int
    V: float
    eta: float
    T: int
    start_point: np.ndarray
    end_point: np.ndarray
    delta_k: Optional[float] = None
    pathwise_regret: Optional[float] = None
    D: Optional[float] = None
    radius: Optional[float] = None


@dataclass
class RunTrace:
    per_epoch: list
    total_gradient_updates: int
    final_point: np.ndarray
    final_suboptimality: Optional[float] = None
    schedule: Optional[EpochSchedule] = None
    seed: Optional[int] = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# lockstep inner loop


def _check_feasible(domain: Domain, X: np.ndarray) -> None:
    if not np.all(domain.contains(X, FEASIBILITY_TOL)):
        raise InfeasibleStart("start point is not in the domain")


def _stack_start(x1, n: int) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    if x1.ndim == 1:
        return np.tile(x1, (n, 1))
    if x1.shape[0] != n:
        raise ValueError(f"got {x1.shape[0]} start points for {n} trials")
    return x1.copy()


def _inner_batch(problem: Problem, project, X1: np.ndarray, eta, T: int, rngs: Sequence,
                 rule: str, x_star, verify: bool, record_iterates: bool):
    """T projected stochastic subgradient steps for every row of X1.

    ``eta`` is a scalar or a length-T array of step sizes.  Returns
    (returned points, x_{T+1}, regret sums or None, iterates or None).
    """
    if rule not in ITERATE_RULES:
        raise ValueError(f"unknown iterate rule {rule!r}")
    n = X1.shape[0]
    G = problem.spec.G
    etas = np.broadcast_to(np.asarray(eta, dtype=float), (T,))
    x = X1.copy()
    total = np.zeros_like(x)
    picks = chosen = None
    if rule == UNIFORM_RANDOM:
        picks = np.array([rng.integers(T) for rng in rngs])
        chosen = np.empty_like(x)
    regret = np.zeros(n) if x_star is not None else None
    iterates = np.empty((T + 1,) + x.shape) if record_iterates else None

    for start in range(0, T, NOISE_BLOCK):
        m = min(NOISE_BLOCK, T - start)
        tokens = np.stack([problem.draw_noise(rng, m) for rng in rngs], axis=1)
        for j in range(m):
            t = start + j
            if iterates is not None:
                iterates[t] = x
            total += x
            if picks is not None:
                hit = picks == t
                chosen[hit] = x[hit]
            g = problem.gradient_from_noise(x, tokens[j])
            if verify:
                assert_norm_bound(g, G)
            if regret is not None:
                regret += np.sum(g * (x - x_star), axis=1)
            x = project(x - etas[t] * g)
    if iterates is not None:
        iterates[T] = x
    returned = total / T if picks is None else chosen
    return returned, x, regret, iterates


def sgd_inner_loop(problem: Problem, domain: Domain, x1, eta, T: int, rule: str = AVERAGE,
                   rng: np.random.Generator | None = None, verify: bool = False,
                   record_iterates: bool = False):
    """Fixed-step projected stochastic subgradient descent from ``x1``.

    Returns the average of x_1..x_T (or one of them drawn uniformly) and an
    :class:`InnerTrace` holding x_{T+1} and, when the optimum is known, the
    regret sum  sum_t g_t.(x_t - x*).
    """
    if not np.all(np.asarray(eta) > 0):
        raise NonPositiveConstant("eta", eta)
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    X1 = _stack_start(x1, 1)
    _check_feasible(domain, X1)
    x_star = problem.optimum.x if problem.optimum is not None else None
    ret, last, regret, its = _inner_batch(problem, domain.project, X1, eta, T, [rng], rule,
                                          x_star, verify, record_iterates)
    trace = InnerTrace(
        eta=eta, T=T, last_point=last[0],
        regret_sum=None if regret is None else float(regret[0]),
        D=None if x_star is None else float(row_norms(X1[0] - x_star)),
        iterates=None if its is None else its[:, 0, :],
    )
    return ret[0], trace


# ---------------------------------------------------------------------------
# drivers


def _suboptimality(problem: Problem, X: np.ndarray):
    if problem.optimum is None:
        return None
    return np.asarray(problem.value_oracle(X), dtype=float) - problem.optimum.value


def run_schedule_batch(problem: Problem, domain: Domain, x1, schedule: EpochSchedule, rngs: Sequence,
                       rule: str = AVERAGE, verify: bool = False, record_iterates: bool = False,
                       seeds: Optional[Sequence[int]] = None) -> list[RunTrace]:
    """Chain one inner loop per epoch for every trial; returns one RunTrace per trial.

    High-prob schedules (epochs with a radius) project onto K ∩ B(x_1^k, r_k).
    """
    n = len(rngs)
    X = _stack_start(x1, n)
    _check_feasible(domain, X)
    x_star = problem.optimum.x if problem.optimum is not None else None
    records = [[] for _ in range(n)]
    iterate_log = [[] for _ in range(n)] if record_iterates else None

    for ep in schedule.epochs:
        delta = _suboptimality(problem, X)
        D = row_norms(X - x_star) if x_star is not None else None
        if ep.radius is not None:
            project = intersection_with_ball(domain, X.copy(), ep.radius).project
        else:
            project = domain.project
        ret, _, regret, its = _inner_batch(problem, project, X, ep.eta, ep.T, rngs, rule,
                                           x_star, verify, record_iterates)
        for i in range(n):
            records[i].append(EpochRecord(
                k=ep.k, V=ep.V, eta=ep.eta, T=ep.T, start_point=X[i].copy(), end_point=ret[i].copy(),
                delta_k=None if delta is None else float(delta[i]),
                pathwise_regret=None if regret is None else float(regret[i]) / ep.T,
                D=None if D is None else float(D[i]), radius=ep.radius,
            ))
            if iterate_log is not None:
                iterate_log[i].append(its[:, i, :])
        X = ret

    final_gap = _suboptimality(problem, X)
    traces = []
    for i in range(n):
        tr = RunTrace(
            per_epoch=records[i], total_gradient_updates=schedule.total_updates, final_point=X[i].copy(),
            final_suboptimality=None if final_gap is None else float(final_gap[i]),
            schedule=schedule, seed=None if seeds is None else seeds[i],
        )
        if iterate_log is not None:
            tr.extra["iterates"] = iterate_log[i]
        traces.append(tr)
    return traces


def epoch_gd(problem: Problem, domain: Domain, x1, epsilon: float, rule: str = AVERAGE,
             rng: np.random.Generator | None = None, verify: bool = False):
    """Epoch-GD with the in-expectation constants; returns (final point, RunTrace)."""
    schedule = build_epoch_schedule(problem.spec, epsilon, EXPECTATION)
    rng = rng if rng is not None else np.random.default_rng()
    (trace,) = run_schedule_batch(problem, domain, x1, schedule, [rng], rule, verify)
    return trace.final_point, trace


def epoch_gd_high_prob(problem: Problem, domain: Domain, x1, epsilon: float, delta: float,
                       rng: np.random.Generator | None = None, rule: str = AVERAGE,
                       radius_rule: str = "analysis", verify: bool = False, record_iterates: bool = False):
    """Epoch-GD with the high-probability constants and per-epoch localisation ball."""
    schedule = build_epoch_schedule(problem.spec, epsilon, HIGH_PROB, delta, radius_rule=radius_rule)
    rng = rng if rng is not None else np.random.default_rng()
    (trace,) = run_schedule_batch(problem, domain, x1, schedule, [rng], rule, verify, record_iterates)
    return trace.final_point, trace


def baseline_steps(lam: float, T: int) -> np.ndarray:
    return 1.0 / (lam * np.arange(1, T + 1))


def baseline_sgd_batch(problem: Problem, domain: Domain, x1, T: int, rngs: Sequence, lam: float | None = None,
                       verify: bool = False, seeds: Optional[Sequence[int]] = None) -> list[RunTrace]:
    """Projected SGD with step 1/(lam t), averaged over x_1..x_T.

    ``lam`` defaults to 2*lambda_hk, the standard strong-convexity modulus matching the growth constant.
    """
    lam = 2 * problem.spec.lambda_hk if lam is None else lam
    if not lam > 0:
        raise NonPositiveConstant("lam", lam)
    if T < 1:
        raise ValueError("T must be >= 1")
    X = _stack_start(x1, len(rngs))
    _check_feasible(domain, X)
    x_star = problem.optimum.x if problem.optimum is not None else None
    start_gap = _suboptimality(problem, X)
    ret, last, regret, _ = _inner_batch(problem, domain.project, X, baseline_steps(lam, T), T, rngs,
                                        AVERAGE, x_star, verify, False)
    gap = _suboptimality(problem, ret)
    traces = []
    for i in range(len(rngs)):
        rec = EpochRecord(k=1, V=problem.spec.M, eta=1.0 / lam, T=T, start_point=X[i].copy(),
                          end_point=ret[i].copy(),
                          delta_k=None if start_gap is None else float(start_gap[i]),
                          pathwise_regret=None if regret is None else float(regret[i]) / T)
        traces.append(RunTrace(per_epoch=[rec], total_gradient_updates=T, final_point=ret[i].copy(),
                               final_suboptimality=None if gap is None else float(gap[i]),
                               seed=None if seeds is None else seeds[i],
                               extra={"last_point": last[i].copy()}))
    return traces


def baseline_sgd_decaying(problem: Problem, domain: Domain, x1, T: int, rng: np.random.Generator | None = None,
                          lam: float | None = None, verify: bool = False):
    rng = rng if rng is not None else np.random.default_rng()
    (trace,) = baseline_sgd_batch(problem, domain, x1, T, [rng], lam, verify)
    return trace.final_point, trace
