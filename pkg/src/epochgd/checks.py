"""Invariant checks shared by ``epochgd verify`` and the test-suite.

Each check returns a :class:`CheckResult`; nothing here raises on a failed
property.  Sample sizes default to the documented ones and can be scaled down.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import mpmath
import numpy as np

from . import projections as pj
from .core import ProblemSpec, check_growth_condition, check_unbiasedness, row_norms
from .errors import EpochGDError, OracleBoundViolation
from .optimizers import (
    AVERAGE,
    EXPECTATION,
    BudgetPreconditionWarning,
    build_epoch_schedule,
    epoch_gd_high_prob,
    num_epochs,
    run_schedule_batch,
    sgd_inner_loop,
    sharp_budget_bound,
    total_budget_bound,
)
from .problems import make_quadratic, make_svm, reference_optimum, toy_dataset
from .stats import azuma_threshold, empirical_tail, fit_loglog_slope, rademacher_walk_sums, stderr


@dataclass
class CheckResult:
    module: str
    name: str
    ok: bool
    detail: str = ""


def default_quadratic(noise_sigma: float = 0.5):
    """The benchmark quadratic: 5-D, a=1, M=G=4, planted optimum inside a radius-0.5 ball."""
    return make_quadratic(5, 1.0, np.full(5, 0.1), noise_sigma=noise_sigma, domain_radius=0.5,
                          noise_bound=2.0, M=4.0, G=4.0)


# ---------------------------------------------------------------------------
# brute-force oracles


def grid_minimize_2d(objective: Callable, feasible: Callable, lo, hi, steps=(1e-2, 1e-3, 1e-4)):
    """Minimise a convex ``objective`` over a convex 2-D set by successively finer grids.

    Each refinement searches a window around the previous best whose half-width
    covers the worst-case distance to the true minimiser implied by the coarse gap.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    best = None
    best_val = math.inf
    prev_h = None
    for h in steps:
        if best is None:
            a, b = lo, hi
        else:
            w = 4 * prev_h + 2 * math.sqrt(max(best_val, 1e-12) * prev_h * 1.5)
            a, b = np.maximum(lo, best - w), np.minimum(hi, best + w)
        gx = np.arange(a[0], b[0] + h / 2, h)
        gy = np.arange(a[1], b[1] + h / 2, h)
        P = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        P = P[feasible(P)]
        if P.size == 0:
            if best is None:
                raise ValueError("no feasible grid point")
            continue
        vals = objective(P)
        j = int(np.argmin(vals))
        if vals[j] <= best_val:
            best, best_val = P[j], float(vals[j])
        prev_h = h
    return best


def brute_force_intersection(inner, ball_spec, y, bounds_lo, bounds_hi, step: float = 1e-4):
    """Nearest point of box ∩ ball to ``y`` in 2-D by exhaustive boundary sampling.

    A point outside the set projects onto its boundary, which is the part of the
    box perimeter inside the ball plus the part of the circle inside the box.
    Both are sampled at arc-length ``step``.
    """
    y = np.asarray(y, dtype=float)
    c, r = ball_spec.center, float(ball_spec.radius)
    if inner.contains(y, 0.0) and np.linalg.norm(y - c) <= r:
        return y
    lo = np.asarray(bounds_lo, dtype=float)
    hi = np.asarray(bounds_hi, dtype=float)
    edges = []
    for x0, x1 in [((lo[0], lo[1]), (hi[0], lo[1])), ((hi[0], lo[1]), (hi[0], hi[1])),
                   ((hi[0], hi[1]), (lo[0], hi[1])), ((lo[0], hi[1]), (lo[0], lo[1]))]:
        a, b = np.array(x0), np.array(x1)
        s = np.linspace(0.0, 1.0, max(2, int(np.linalg.norm(b - a) / step) + 2))
        edges.append(a + s[:, None] * (b - a))
    P = np.concatenate(edges)
    P = P[row_norms(P - c) <= r]
    theta = np.linspace(0.0, 2 * np.pi, max(8, int(2 * np.pi * r / step) + 2))
    C = c + r * np.column_stack([np.cos(theta), np.sin(theta)])
    C = C[np.all((C >= lo) & (C <= hi), axis=1)]
    cand = np.concatenate([P, C])
    return cand[int(np.argmin(row_norms(cand - y)))]


def brute_force_simplex3(y):
    """Projection of a 3-vector onto the probability simplex by grid search over (x1, x2)."""
    y = np.asarray(y, dtype=float)

    def lift(P):
        return np.column_stack([P, 1.0 - P[:, 0] - P[:, 1]])

    best = grid_minimize_2d(lambda P: row_norms(lift(P) - y), lambda P: P[:, 0] + P[:, 1] <= 1.0 + 1e-12,
                            [0.0, 0.0], [1.0, 1.0])
    return lift(best[None])[0]


def random_intersection_instance(rng: np.random.Generator, margin: float = 0.05):
    """Random box ∩ ball in 2-D whose intersection contains a disk of radius ``margin``."""
    lo = rng.uniform(-1, 0, 2)
    hi = lo + rng.uniform(0.3, 1.5, 2)
    z = rng.uniform(lo + margin, hi - margin)
    radius = rng.uniform(0.1, 1.0)
    direction = rng.standard_normal(2)
    direction /= np.linalg.norm(direction)
    center = z + direction * rng.uniform(0, radius - margin)
    y = rng.uniform(-3, 3, 2)
    return pj.box(lo, hi), pj.BallSpec(center, radius), y, lo, hi


# ---------------------------------------------------------------------------
# domain invariants


def sample_domains(rng: np.random.Generator, dim: int = 3):
    c = rng.standard_normal(dim)
    lo = rng.uniform(-1, 0, dim)
    hi = lo + rng.uniform(0, 2, dim)
    inner = pj.box(lo, hi)
    z = rng.uniform(lo, hi)
    return {
        "whole": pj.whole_space(dim),
        "ball": pj.ball(c, rng.uniform(0.1, 2)),
        "ball-radius-0": pj.ball(c, 0.0),
        "box": inner,
        "simplex": pj.simplex(dim),
        "intersection": pj.intersection_with_ball(inner, z, rng.uniform(0.2, 1.0)),
    }


def domain_invariants(domain, n: int, rng: np.random.Generator, exact: bool = True) -> tuple[bool, str]:
    dim = domain.dim
    a = rng.standard_normal((n, dim)) * 10.0 ** rng.uniform(-1, 1, (n, 1))
    b = rng.standard_normal((n, dim)) * 10.0 ** rng.uniform(-1, 1, (n, 1))
    pa, pb = domain.project(a), domain.project(b)
    idem = float(np.max(row_norms(domain.project(pa) - pa)))
    member = bool(np.all(domain.contains(pa, 1e-9)))
    slack = float(np.max(row_norms(pa - pb) - row_norms(a - b)))
    # Dykstra stops at 1e-10 accuracy, so it gets that much slack on top
    tol = 1e-12 if exact else 1e-9
    ok = idem <= tol and member and slack <= tol
    return ok, f"idempotence={idem:.2e} membership={member} expansion={slack:.2e}"


def variational_check(domain, y, n_z: int, rng: np.random.Generator) -> float:
    """max over feasible z of (y - P y).(z - P y); nonpositive for the exact projection."""
    p = domain.project(y)
    z = domain.project(p + rng.standard_normal((n_z, domain.dim)) * 10.0 ** rng.uniform(-2, 1, (n_z, 1)))
    return float(np.max((z - p) @ (y - p)))


# ---------------------------------------------------------------------------
# suites


def core_checks(scale: float, fault: str | None) -> list[CheckResult]:
    out = []
    q = default_quadratic()
    svm = make_svm(toy_dataset(), 1.0)
    ref = reference_optimum(svm, 1e-3)
    n_unb = max(1000, int(100_000 * scale))
    for name, prob, x in [("quadratic", q, np.full(5, -0.2)), ("svm", ref.problem, np.array([0.3, 0.1]))]:
        rep = check_unbiasedness(prob, x, n_unb, seed=1)
        out.append(CheckResult("core", f"unbiasedness[{name}]", rep.ok, f"max z = {rep.max_z:.2f}"))
    g = check_growth_condition(q, max(100, int(10_000 * scale)), seed=2)
    out.append(CheckResult("core", "growth[quadratic]", not g.violated, f"min slack {g.min_slack:.3e}"))
    # the reference optimum is only tol-accurate: shrink f* by the certified gap
    svm_lb = ref.problem.with_optimum(ref.x, ref.value - ref.certified_gap)
    g = check_growth_condition(svm_lb, max(100, int(10_000 * scale)), seed=3)
    out.append(CheckResult("core", "growth[svm]", not g.violated, f"min slack {g.min_slack:.3e}"))

    if fault == "g-too-small":
        q = q.with_spec(G=0.5)
    rng = [np.random.default_rng(s) for s in range(20)]
    try:
        sched = build_epoch_schedule(q.spec, 0.25)
        run_schedule_batch(q, q.domain, q.meta["default_start"], sched, rng, verify=True)
        out.append(CheckResult("core", "subgradient-norm<=G", True, "every draw within G"))
    except OracleBoundViolation as exc:
        out.append(CheckResult("core", "subgradient-norm<=G", False, str(exc)))
    return out


def projection_checks(scale: float) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(10)
    n = max(100, int(10_000 * scale))
    for name, dom in sample_domains(rng).items():
        ok, detail = domain_invariants(dom, n, rng, exact=name != "intersection")
        out.append(CheckResult("projections", f"domain[{name}]", ok, detail))
    worst = -math.inf
    for name, dom in sample_domains(rng).items():
        if name == "intersection":
            continue
        for y in rng.standard_normal((20, dom.dim)) * 3:
            worst = max(worst, variational_check(dom, y, max(10, int(1000 * scale)), rng))
    out.append(CheckResult("projections", "variational", worst <= 1e-9, f"max inner product {worst:.2e}"))
    n_inst = max(5, int(100 * scale))
    err = 0.0
    for _ in range(n_inst):
        inner, bs, y, lo, hi = random_intersection_instance(rng)
        z = pj.project_intersection_ball(inner, bs, y)
        err = max(err, float(np.linalg.norm(z - brute_force_intersection(inner, bs, y, lo, hi))))
    out.append(CheckResult("projections", "dykstra-vs-grid", err <= 1e-3, f"max error {err:.2e} over {n_inst}"))
    return out


def optimizer_checks(scale: float) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(20)
    # schedule exactness
    bad = 0
    for _ in range(200):
        spec = ProblemSpec(1, float(10 ** rng.uniform(-2, 3)), float(10 ** rng.uniform(-1, 1)),
                           float(10 ** rng.uniform(-1, 1)))
        eps = float(spec.M * 10 ** rng.uniform(-4, 0.5))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BudgetPreconditionWarning)
            s = build_epoch_schedule(spec, eps)
        for e in s.epochs:
            with mpmath.workprec(256):
                V = mpmath.ldexp(mpmath.mpf(spec.M), -(e.k - 1))
                T = int(mpmath.ceil(16 * mpmath.mpf(spec.G) ** 2 / (mpmath.mpf(spec.lambda_hk) * V)))
            if e.V != float(V) or e.eta != e.V / (4 * spec.G ** 2) or e.T != T:
                bad += 1
        if s.k_total != num_epochs(spec.M, eps) or (s.k_total and spec.M / 2 ** s.k_total > eps):
            bad += 1
    out.append(CheckResult("optimizers", "schedule-exactness", bad == 0, f"{bad} mismatches"))

    # budget caps
    viol20 = violsharp = checked = 0
    for _ in range(100):
        spec = ProblemSpec(1, float(10 ** rng.uniform(-1, 2)), float(10 ** rng.uniform(-0.5, 0.5)),
                           float(10 ** rng.uniform(-0.5, 0.5)))
        eps = float(spec.M * 10 ** rng.uniform(-3, -0.3))
        bound, ok = total_budget_bound(spec, eps)
        if not ok:
            continue
        checked += 1
        total = build_epoch_schedule(spec, eps).total_updates
        viol20 += total > bound
        violsharp += total > sharp_budget_bound(spec, eps)
    out.append(CheckResult("optimizers", "budget<=20G^2/(lambda eps)", viol20 == 0,
                           f"{viol20}/{checked} schedules exceed the cap"))
    out.append(CheckResult("optimizers", "budget<=32G^2/(lambda eps)+k", violsharp == 0,
                           f"{violsharp}/{checked} schedules exceed the cap"))

    # pathwise regret
    q = default_quadratic()
    worst = -math.inf
    for seed in range(max(10, int(100 * scale))):
        r = np.random.default_rng(seed)
        eta = float(10 ** r.uniform(-3, 0))
        T = int(r.integers(1, 400))
        _, tr = sgd_inner_loop(q, q.domain, q.meta["default_start"], eta, T, rng=r)
        worst = max(worst, tr.average_regret - (eta * q.spec.G ** 2 + tr.D ** 2 / (eta * T)))
    out.append(CheckResult("optimizers", "pathwise-regret", worst <= 1e-9, f"max excess {worst:.3e}"))

    # epoch halving
    n = max(100, int(1000 * scale))
    sched = build_epoch_schedule(q.spec, 2 ** -4)
    traces = run_schedule_batch(q, q.domain, q.meta["default_start"], sched,
                                [np.random.default_rng(s) for s in range(n)])
    ok = True
    for k, ep in enumerate(sched.epochs):
        d = [t.per_epoch[k].delta_k for t in traces]
        ok &= float(np.mean(d)) - 2 * stderr(d) <= ep.V
    fin = [t.final_suboptimality for t in traces]
    ok &= float(np.mean(fin)) - 2 * stderr(fin) <= sched.final_target
    out.append(CheckResult("optimizers", "epoch-halving", bool(ok), f"{n} trials"))

    # high-prob feasibility
    bad = 0
    _, tr = epoch_gd_high_prob(q, q.domain, q.meta["default_start"], 0.5, 0.1, rng=np.random.default_rng(5),
                               record_iterates=True)
    for rec, its in zip(tr.per_epoch, tr.extra["iterates"]):
        bad += int(np.sum(~q.domain.contains(its, 1e-9)))
        bad += int(np.sum(row_norms(its - rec.start_point) > rec.radius + 1e-9))
    out.append(CheckResult("optimizers", "high-prob-feasibility", bad == 0, f"{bad} infeasible iterates"))

    # determinism
    a = run_schedule_batch(q, q.domain, q.meta["default_start"], sched, [np.random.default_rng(7)])[0]
    b = run_schedule_batch(q, q.domain, q.meta["default_start"], sched,
                           [np.random.default_rng(s) for s in (3, 7, 9)])[1]
    same = np.array_equal(a.final_point, b.final_point) and all(
        np.array_equal(x.end_point, y.end_point) and x.delta_k == y.delta_k for x, y in zip(a.per_epoch, b.per_epoch))
    out.append(CheckResult("optimizers", "determinism", bool(same), "single vs batched replay"))
    return out


def problem_checks(scale: float) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(30)
    q = default_quadratic()
    X = q.domain.project(rng.standard_normal((1000, 5)))
    err = float(np.max(np.abs(q.value_oracle(X) - 1.0 * np.sum((X - q.optimum.x) ** 2, axis=1))))
    out.append(CheckResult("problems", "quadratic-growth-equality", err <= 1e-12, f"max error {err:.1e}"))
    svm = make_svm(toy_dataset(), 1.0)
    n = max(10_000, int(1_000_000 * scale))
    W = svm.domain.project(rng.standard_normal((n, 2)) * rng.uniform(0, 2, (n, 1)))
    idx = svm.draw_noise(rng, n)
    worst = float(np.max(row_norms(svm.gradient_from_noise(W, idx))))
    out.append(CheckResult("problems", "svm-subgradient-bound", worst <= svm.spec.G * (1 + 1e-12),
                           f"max norm {worst:.4f} vs G={svm.spec.G:.4f}"))
    return out


def stats_checks(scale: float) -> list[CheckResult]:
    out = []
    mono = (azuma_threshold(1, 10, 0.1) < azuma_threshold(2, 10, 0.1) < azuma_threshold(2, 20, 0.1)
            < azuma_threshold(2, 20, 0.01))
    out.append(CheckResult("stats", "azuma-monotone", mono))
    N = max(10_000, int(100_000 * scale))
    rng = np.random.default_rng(40)
    ok = True
    for T, delta in [(10, 0.1), (100, 0.05), (100, 0.01)]:
        tail = empirical_tail(rademacher_walk_sums(N, T, rng), azuma_threshold(1.0, T, delta))
        ok &= tail <= delta + 3 * math.sqrt(delta / N)
    out.append(CheckResult("stats", "azuma-empirical", bool(ok), f"N={N}"))
    slope = fit_loglog_slope([(n, 3.0 * n ** -1.5) for n in (1, 10, 100, 1000)])
    out.append(CheckResult("stats", "loglog-exact", abs(slope + 1.5) <= 1e-12, f"slope {slope!r}"))
    return out


SUITES = {
    "core": lambda scale, fault: core_checks(scale, fault),
    "projections": lambda scale, fault: projection_checks(scale),
    "optimizers": lambda scale, fault: optimizer_checks(scale),
    "problems": lambda scale, fault: problem_checks(scale),
    "stats": lambda scale, fault: stats_checks(scale),
}


def run_checks(scope: str = "all", scale: float = 1.0, fault: str | None = None) -> list[CheckResult]:
    names = list(SUITES) if scope == "all" else [scope]
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown scope {name!r}")
        try:
            results.extend(SUITES[name](scale, fault))
        except EpochGDError as exc:
            results.append(CheckResult(name, "suite", False, f"{type(exc).__name__}: {exc}"))
    return results
