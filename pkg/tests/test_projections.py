import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from epochgd import projections as pj
from epochgd.checks import (
    brute_force_intersection,
    brute_force_simplex3,
    domain_invariants,
    random_intersection_instance,
    sample_domains,
    variational_check,
)
from epochgd.errors import DimensionMismatch, InvalidBox, NoConvergence

finite = st.floats(-1e3, 1e3, allow_nan=False)


@pytest.mark.parametrize("y", [(3.0, -4.0), (0.0, 0.0), (1e300, 0.0)])
def test_whole_space_is_identity(y):
    assert np.array_equal(pj.project_whole_space(y), np.array(y))


def test_ball_examples():
    np.testing.assert_allclose(pj.project_ball([3, 4], pj.BallSpec([0, 0], 1)), [0.6, 0.8], rtol=1e-15)
    assert np.array_equal(pj.project_ball([0.1, 0.2], pj.BallSpec([0, 0], 1)), [0.1, 0.2])
    assert np.array_equal(pj.project_ball([5, 0], pj.BallSpec([1, 0], 0)), [1, 0])


def test_ball_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        pj.project_ball([1, 2, 3], pj.BallSpec([0, 0], 1))


def test_box_examples():
    assert np.array_equal(pj.project_box([2, -3], [0, 0], [1, 1]), [1, 0])
    assert np.array_equal(pj.project_box([0.5, 0.5], [0, 0], [1, 1]), [0.5, 0.5])
    with pytest.raises(InvalidBox):
        pj.project_box([0.5], [1], [0])


def test_simplex_examples():
    np.testing.assert_allclose(pj.project_simplex([0.5, 0.5, 0.5]), [1 / 3] * 3, atol=1e-15)
    assert np.array_equal(pj.project_simplex([2, 0, 0]), [1, 0, 0])


def test_simplex_matches_grid_search():
    y = [0.9, -0.3, 0.1]
    assert np.linalg.norm(pj.project_simplex(y) - brute_force_simplex3(y)) <= 1e-3


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(1, 12), elements=finite))
def test_simplex_output_is_a_distribution(y):
    x = pj.project_simplex(y)
    assert np.all(x >= 0)
    assert abs(x.sum() - 1) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_simplex_is_nearest(y, z_raw):
    # any other simplex point is no closer
    x = pj.project_simplex(y)
    z = pj.project_simplex(z_raw)
    assert np.linalg.norm(y - x) <= np.linalg.norm(y - z) + 1e-9


def test_intersection_examples():
    whole = pj.whole_space(2)
    np.testing.assert_allclose(pj.project_intersection_ball(whole, pj.BallSpec([0, 0], 1), [2, 2]),
                               [1 / math.sqrt(2)] * 2, rtol=1e-15)
    unit = pj.box([0, 0], [1, 1])
    assert np.array_equal(pj.project_intersection_ball(unit, pj.BallSpec([0, 0], 1), [0.3, 0.3]), [0.3, 0.3])
    z = pj.project_intersection_ball(unit, pj.BallSpec([1, 1], 0.5), [0, 0])
    grid = brute_force_intersection(unit, pj.BallSpec([1, 1], 0.5), [0, 0], [0, 0], [1, 1])
    assert np.linalg.norm(z - grid) <= 1e-3
    np.testing.assert_allclose(z, [1 - 0.5 / math.sqrt(2)] * 2, atol=1e-9)


def test_intersection_no_convergence():
    unit = pj.box([0, 0], [1, 1])
    with pytest.raises(NoConvergence):
        pj.project_intersection_ball(unit, pj.BallSpec([1.2, 1.2], 0.5), [3.0, -2.0], max_iters=1,
                                     fallback=False)


def test_intersection_batch_rows_match_single_calls(rng):
    inner = pj.box([-1, -1, -1], [1, 0.5, 1])
    centers = rng.uniform(-0.5, 0.5, (30, 3))
    Y = rng.normal(0, 2, (30, 3))
    batched = pj.project_intersection_ball(inner, pj.BallSpec(centers, 0.7), Y)
    for i in range(30):
        assert np.array_equal(batched[i], pj.project_intersection_ball(inner, pj.BallSpec(centers[i], 0.7), Y[i]))


@pytest.mark.parametrize("name", ["whole", "ball", "ball-radius-0", "box", "simplex", "intersection"])
def test_domain_invariants(name):
    rng = np.random.default_rng(hash(name) % 2 ** 32)
    dom = sample_domains(rng)[name]
    ok, detail = domain_invariants(dom, 10_000, rng, exact=name != "intersection")
    assert ok, detail


@pytest.mark.parametrize("name", ["ball", "box", "simplex"])
def test_variational_inequality(name):
    rng = np.random.default_rng(7)
    dom = sample_domains(rng)[name]
    worst = max(variational_check(dom, y, 1000, rng) for y in rng.normal(0, 3, (10, dom.dim)))
    assert worst <= 1e-9


def test_dykstra_agrees_with_grid_on_random_instances():
    rng = np.random.default_rng(2024)
    errs = []
    for _ in range(100):
        inner, ball, y, lo, hi = random_intersection_instance(rng)
        z = pj.project_intersection_ball(inner, ball, y)
        errs.append(np.linalg.norm(z - brute_force_intersection(inner, ball, y, lo, hi)))
    assert max(errs) <= 1e-3


def test_from_descriptor_roundtrip():
    dom = pj.from_descriptor({"kind": "intersection", "inner": {"kind": "box", "lo": [0, 0], "hi": [1, 1]},
                              "center": [0, 0], "radius": 1})
    assert dom.kind == "intersection"
    assert dom.contains(dom.project([5.0, 5.0]))


def test_intersection_empty_raises():
    unit = pj.box([0, 0], [1, 1])
    with pytest.raises(NoConvergence):
        pj.project_intersection_ball(unit, pj.BallSpec([3.0, 3.0], 0.5), [0.0, 0.0], max_iters=5)


def test_dual_fallback_matches_converged_dykstra():
    rng = np.random.default_rng(31)
    err = 0.0
    for _ in range(200):
        inner, bs, y, _, _ = random_intersection_instance(rng)
        full = pj.project_intersection_ball(inner, bs, y, fallback=False)
        short = pj.project_intersection_ball(inner, bs, y, max_iters=2)
        err = max(err, float(np.linalg.norm(full - short)))
    assert err <= 1e-8


def test_slow_dykstra_instance_is_finished_exactly():
    # far-away point nearly tangent to the ball: Dykstra needs more than 10^4 sweeps here
    inner = pj.box([-0.44753265148556864, -0.07255483309167188, -0.040207388106989206],
                   [1.0645113735450782, 1.4166703737051483, 0.6250029046721054])
    bs = pj.BallSpec([0.6895003559711239, 0.6094201798867462, 0.18986097196866455], 0.726729663664458)
    y = np.array([-0.8868930983087387, -16.206120303346268, -8.486886672086696])
    with pytest.raises(NoConvergence):
        pj.project_intersection_ball(inner, bs, y, fallback=False)
    z = pj.project_intersection_ball(inner, bs, y)
    slow = pj.project_intersection_ball(inner, bs, y, max_iters=200_000, fallback=False)
    assert inner.contains(z, 0.0) and np.linalg.norm(z - bs.center) <= bs.radius + 1e-10
    assert np.linalg.norm(z - slow) <= 1e-8
    dom = pj.intersection_with_ball(inner, bs.center, bs.radius)
    assert variational_check(dom, y, 5000, np.random.default_rng(0)) <= 1e-8
