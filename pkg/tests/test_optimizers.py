import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epochgd import projections as pj
from epochgd.core import Problem, ProblemSpec
from epochgd.errors import BudgetPreconditionWarning, InfeasibleStart, MissingDelta
from epochgd.optimizers import (
    HIGH_PROB,
    UNIFORM_RANDOM,
    baseline_sgd_decaying,
    build_epoch_schedule,
    epoch_gd,
    epoch_gd_high_prob,
    localisation_radius,
    num_epochs,
    run_schedule_batch,
    sgd_inner_loop,
    sharp_budget_bound,
    total_budget_bound,
)

UNIT = ProblemSpec(dim=1, M=1.0, G=1.0, lambda_hk=1.0)


def square_1d(G=2.0):
    """f(x) = x^2 on [-1, 1] with exact gradients."""
    return Problem(
        spec=ProblemSpec(1, 1.0, G, 1.0),
        value_oracle=lambda x: np.sum(np.asarray(x) ** 2, axis=-1),
        exact_subgradient_oracle=lambda x: 2 * np.asarray(x),
        draw_noise=lambda rng, n: np.zeros((n, 0)),
        gradient_from_noise=lambda x, z: 2 * x,
    ).with_optimum([0.0], 0.0)


def zero_gradient(dim=3):
    return Problem(
        spec=ProblemSpec(dim, 1.0, 1.0, 1.0),
        value_oracle=lambda x: np.zeros(np.shape(x)[:-1]),
        exact_subgradient_oracle=lambda x: np.zeros_like(x),
        draw_noise=lambda rng, n: np.zeros((n, 0)),
        gradient_from_noise=lambda x, z: np.zeros_like(x),
    )


# --- schedule -------------------------------------------------------------


def test_expectation_schedule_example():
    s = build_epoch_schedule(UNIT, 0.25)
    assert s.k_total == 2
    assert [(e.V, e.eta, e.T) for e in s.epochs] == [(1, 0.25, 16), (0.5, 0.125, 32)]


def test_empty_schedule_when_epsilon_exceeds_M():
    s = build_epoch_schedule(UNIT, 2.0)
    assert s.k_total == 0 and s.epochs == ()


def test_high_prob_schedule_example():
    s = build_epoch_schedule(UNIT, 1 / 16, HIGH_PROB, delta=0.05)
    assert s.k_total == 4
    assert s.high_prob.delta_tilde == 0.05 / 16 == 0.003125
    with mpmath.workdps(50):
        expected = int(mpmath.ceil(100 * mpmath.log(320)))
    assert expected == 577
    assert s.epochs[0].T == expected
    assert s.epochs[0].eta == 1 / 10
    assert s.epochs[0].radius == 1.0


def test_high_prob_needs_delta():
    with pytest.raises(MissingDelta):
        build_epoch_schedule(UNIT, 0.1, HIGH_PROB)


def test_literal_radius_option():
    assert localisation_radius(0.25, 4.0, "literal") == 0.25
    assert localisation_radius(0.25, 4.0) == 0.25


def test_precondition_warning():
    spec = ProblemSpec(1, 2.0 ** 64, 1.0, 1.0)
    with pytest.warns(BudgetPreconditionWarning):
        s = build_epoch_schedule(spec, 1.0)
    assert s.k_total == 64


@pytest.mark.parametrize("M, eps, k", [(1, 0.25, 2), (1, 0.26, 2), (1, 0.249, 3), (1, 1, 0), (1, 2, 0),
                                       (4, 2 ** -6, 8), (3, 1, 2)])
def test_num_epochs(M, eps, k):
    assert num_epochs(M, eps) == k


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-2, 1e3), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1e-4, 3))
def test_schedule_matches_closed_forms(M, G, lam, ratio):
    spec = ProblemSpec(1, M, G, lam)
    eps = M * ratio
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetPreconditionWarning)
        s = build_epoch_schedule(spec, eps)
    with mpmath.workprec(300):
        k_exact = max(0, int(mpmath.ceil(mpmath.log(mpmath.mpf(M) / mpmath.mpf(eps), 2))))
    assert s.k_total == k_exact
    for i, e in enumerate(s.epochs):
        assert e.k == i + 1
        assert e.V == M / 2 ** i
        if i:
            assert e.V == s.epochs[i - 1].V / 2
        assert e.eta == e.V / (4 * G ** 2)
        with mpmath.workprec(300):
            T_exact = int(mpmath.ceil(16 * mpmath.mpf(G) ** 2 / (mpmath.mpf(lam) * mpmath.mpf(e.V))))
        assert e.T == T_exact


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999), st.integers(1, 60))
def test_delta_tilde_union_bound(delta, k):
    M = 2.0 ** k
    s = build_epoch_schedule(ProblemSpec(1, M, 1.0, 1.0), 1.0, HIGH_PROB, delta)
    hp = s.high_prob
    assert 0 < hp.delta_tilde <= delta
    assert (1 - hp.delta_tilde) ** s.k_total >= 1 - delta


def test_budget_bound_examples():
    assert total_budget_bound(UNIT, 0.25) == (80.0, True)
    assert total_budget_bound(ProblemSpec(1, 2.0 ** 64, 1.0, 1.0), 1.0)[1] is False
    assert total_budget_bound(ProblemSpec(1, 1.0, 2.0, 0.5), 0.1)[0] == pytest.approx(1600, rel=1e-15)


def test_budget_cap_counterexample():
    # M/eps just above a power of two: precondition holds but the 20 G^2/(lambda eps) cap does not
    bound, ok = total_budget_bound(UNIT, 0.249)
    total = build_epoch_schedule(UNIT, 0.249).total_updates
    assert ok and total == 16 + 32 + 64 and total > bound
    assert total <= sharp_budget_bound(UNIT, 0.249)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-2, 1e3), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1e-4, 1))
def test_sharp_budget_always_holds(M, G, lam, ratio):
    spec = ProblemSpec(1, M, G, lam)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BudgetPreconditionWarning)
        assert build_epoch_schedule(spec, M * ratio).total_updates <= sharp_budget_bound(spec, M * ratio)


# --- inner loop -------------------------------------------------------------


def test_inner_loop_hand_steps():
    p, dom = square_1d(), pj.box([-1.0], [1.0])
    x, tr = sgd_inner_loop(p, dom, [1.0], 0.25, 1, record_iterates=True)
    assert x.tolist() == [1.0] and tr.last_point.tolist() == [0.5]
    x, tr = sgd_inner_loop(p, dom, [1.0], 0.25, 2, record_iterates=True)
    assert x.tolist() == [0.75] and tr.last_point.tolist() == [0.25]
    assert tr.iterates[:, 0].tolist() == [1.0, 0.5, 0.25]


def test_inner_loop_zero_gradient_fixed_point():
    x1 = np.array([0.2, -0.1, 0.3])
    x, _ = sgd_inner_loop(zero_gradient(), pj.whole_space(3), x1, 0.7, 5)
    assert np.array_equal(x, x1)


def test_inner_loop_rejects_infeasible_start():
    with pytest.raises(InfeasibleStart):
        sgd_inner_loop(square_1d(), pj.box([-1.0], [1.0]), [2.0], 0.1, 3)


def test_uniform_random_rule_returns_an_iterate(quad):
    x, tr = sgd_inner_loop(quad, quad.domain, quad.meta["default_start"], 0.05, 50, rule=UNIFORM_RANDOM,
                           rng=np.random.default_rng(3), record_iterates=True)
    assert any(np.array_equal(x, it) for it in tr.iterates[:50])


def test_pathwise_regret_bound(quad):
    G = quad.spec.G
    for seed in range(100):
        r = np.random.default_rng(seed)
        eta = float(10 ** r.uniform(-3, 0))
        T = int(r.integers(1, 500))
        _, tr = sgd_inner_loop(quad, quad.domain, quad.meta["default_start"], eta, T, rng=r)
        assert tr.average_regret <= eta * G ** 2 + tr.D ** 2 / (eta * T) + 1e-9


# --- drivers ------------------------------------------------------------------


def test_epoch_gd_empty_schedule_returns_start(quad):
    x1 = quad.meta["default_start"]
    x, tr = epoch_gd(quad, quad.domain, x1, 10.0, rng=np.random.default_rng(0))
    assert np.array_equal(x, x1) and tr.total_gradient_updates == 0


def test_epoch_gd_budget_example():
    q = square_1d(G=1.0)
    _, tr = epoch_gd(q.with_spec(G=1.0), pj.box([-1.0], [1.0]), [0.0], 0.25, rng=np.random.default_rng(0))
    assert tr.total_gradient_updates == 48 <= total_budget_bound(UNIT, 0.25)[0]


def test_epoch_gd_chains_epochs(quad):
    _, tr = epoch_gd(quad, quad.domain, quad.meta["default_start"], 0.5, rng=np.random.default_rng(1))
    for a, b in zip(tr.per_epoch, tr.per_epoch[1:]):
        assert np.array_equal(a.end_point, b.start_point)
    assert np.array_equal(tr.per_epoch[-1].end_point, tr.final_point)
    assert tr.total_gradient_updates == sum(r.T for r in tr.per_epoch)
    assert all(r.delta_k >= 0 for r in tr.per_epoch)


def test_epoch_gd_mean_within_epsilon(quad):
    eps = 2.0 ** -4
    s = build_epoch_schedule(quad.spec, eps)
    traces = run_schedule_batch(quad, quad.domain, quad.meta["default_start"], s,
                                [np.random.default_rng(i) for i in range(200)])
    final = np.array([t.final_suboptimality for t in traces])
    assert final.mean() + 1.96 * final.std(ddof=1) / math.sqrt(200) <= eps


def test_high_prob_epoch1_radius_and_feasibility(quad):
    spec = ProblemSpec(5, 1.0, quad.spec.G, 1.0)
    s = build_epoch_schedule(spec, 1 / 16, HIGH_PROB, 0.05)
    assert s.epochs[0].radius == 1.0
    _, tr = epoch_gd_high_prob(quad, quad.domain, quad.meta["default_start"], 0.5, 0.1,
                               rng=np.random.default_rng(2), record_iterates=True)
    for rec, its in zip(tr.per_epoch, tr.extra["iterates"]):
        assert np.all(quad.domain.contains(its, 1e-9))
        assert np.all(np.linalg.norm(its - rec.start_point, axis=1) <= rec.radius + 1e-9)


def test_high_prob_on_box_domain():
    # exercises the Dykstra path inside the optimizer
    from epochgd.problems import make_quadratic
    q = make_quadratic(2, 1.0, [0.3, 0.2], noise_sigma=0.3, domain_radius=1.0)
    box = pj.box([-0.2, -0.2], [0.6, 0.6])
    _, tr = epoch_gd_high_prob(q, box, [-0.2, 0.6], 0.25, 0.1, rng=np.random.default_rng(4),
                               record_iterates=True)
    for rec, its in zip(tr.per_epoch, tr.extra["iterates"]):
        assert np.all(box.contains(its, 1e-9))
        assert np.all(np.linalg.norm(its - rec.start_point, axis=1) <= rec.radius + 1e-9)
    assert tr.final_suboptimality <= 0.25


def test_high_prob_empty_schedule(quad):
    x1 = quad.meta["default_start"]
    x, _ = epoch_gd_high_prob(quad, quad.domain, x1, 5.0, 0.1, rng=np.random.default_rng(0))
    assert np.array_equal(x, x1)


def test_batched_trials_match_single_runs(quad):
    s = build_epoch_schedule(quad.spec, 0.25)
    seeds = [5, 17, 99]
    batch = run_schedule_batch(quad, quad.domain, quad.meta["default_start"], s,
                               [np.random.default_rng(x) for x in seeds])
    for seed, tb in zip(seeds, batch):
        _, ts = epoch_gd(quad, quad.domain, quad.meta["default_start"], 0.25, rng=np.random.default_rng(seed))
        assert np.array_equal(ts.final_point, tb.final_point)
        assert [r.delta_k for r in ts.per_epoch] == [r.delta_k for r in tb.per_epoch]
        assert [r.pathwise_regret for r in ts.per_epoch] == [r.pathwise_regret for r in tb.per_epoch]


def test_verification_mode_catches_understated_G(quad):
    from epochgd.errors import OracleBoundViolation
    with pytest.raises(OracleBoundViolation):
        epoch_gd(quad.with_spec(G=0.5), quad.domain, quad.meta["default_start"], 1.0,
                 rng=np.random.default_rng(0), verify=True)


# --- baseline -------------------------------------------------------------------


def test_baseline_hand_step():
    x, tr = baseline_sgd_decaying(square_1d(), pj.box([-1.0], [1.0]), [1.0], 1, lam=2.0)
    assert x.tolist() == [1.0]
    assert tr.extra["last_point"].tolist() == [0.0]


def test_baseline_zero_gradient():
    x1 = np.array([0.5, 0.5, -0.5])
    x, _ = baseline_sgd_decaying(zero_gradient(), pj.whole_space(3), x1, 10)
    assert np.array_equal(x, x1)


def test_baseline_improves_with_budget(quad):
    from epochgd.optimizers import baseline_sgd_batch
    means = []
    for T in (100, 1000, 10_000):
        traces = baseline_sgd_batch(quad, quad.domain, quad.meta["default_start"], T,
                                    [np.random.default_rng(i) for i in range(100)])
        means.append(np.mean([t.final_suboptimality for t in traces]))
    assert all(np.isfinite(means)) and means[0] > means[1] > means[2]
