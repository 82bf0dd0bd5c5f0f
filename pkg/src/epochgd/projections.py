"""Euclidean projections and the `Domain` instances built from them.

Every projection is row-wise: it accepts a single vector or an ``(n, dim)`` stack
and treats rows independently, so batching never changes a row's result.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Domain, row_norms
from .errors import DimensionMismatch, InvalidBox, NoConvergence

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITERS = 10_000


@dataclass(frozen=True)
class BallSpec:
    """Closed L2 ball. ``center`` may be a stack of centers (one per row)."""

    center: np.ndarray
    radius: float | np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        r = np.asarray(self.radius, dtype=float)
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ValueError(f"ball radius must be finite and >= 0, got {self.radius!r}")
        object.__setattr__(self, "radius", r if r.ndim else float(r))


def project_whole_space(y):
    return np.asarray(y, dtype=float)


def project_ball(y, ball: BallSpec):
    y = np.asarray(y, dtype=float)
    if ball.center.shape[-1] != y.shape[-1]:
        raise DimensionMismatch(f"point has dim {y.shape[-1]}, ball center has dim {ball.center.shape[-1]}")
    return _scale_into_ball(y, ball.center, ball.radius)


def _scale_into_ball(y, c, r):
    diff = y - c
    dist = row_norms(diff)
    outside = dist > r
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = c + diff * (r / np.where(outside, dist, 1.0))[..., None]
    return np.where(outside[..., None], scaled, y)


def _check_box(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape:
        raise DimensionMismatch("box bounds differ in shape")
    if np.any(lo > hi):
        raise InvalidBox(f"lower bound exceeds upper bound at index {int(np.argmax(lo > hi))}")
    return lo, hi


def project_box(y, lo, hi):
    lo, hi = _check_box(lo, hi)
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != lo.shape[-1]:
        raise DimensionMismatch(f"point has dim {y.shape[-1]}, box has dim {lo.shape[-1]}")
    return np.minimum(np.maximum(y, lo), hi)


def project_simplex(y):
    """Projection onto {x >= 0, sum(x) = 1} by sorting and thresholding.

    The threshold uses the largest support size rho with u_rho > (sum_{j<=rho} u_j - 1)/rho.
    """
    y = np.asarray(y, dtype=float)
    # shifting along the all-ones direction leaves the projection unchanged and avoids cancellation
    y = y - np.max(y, axis=-1, keepdims=True)
    n = y.shape[-1]
    u = -np.sort(-y, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    return np.maximum(y - theta, 0.0)


def project_intersection_ball(inner: Domain, ball: BallSpec, y, tol: float = DYKSTRA_TOL,
                              max_iters: int = DYKSTRA_MAX_ITERS, fallback: bool = True):
    """Projection onto ``inner ∩ ball`` by Dykstra's corrected alternating projections.

    Rows are iterated until the iterates and both correction terms change by
    less than ``tol`` per sweep and the iterate is within ``tol`` of the ball; finished rows are frozen so a row's
    answer does not depend on what else is in the batch.  The result always lies
    exactly in ``inner``.

    Dykstra converges only linearly, and for far-away points nearly tangent to
    the ball the rate can be too slow for ``max_iters``.  Such rows are finished
    by ``_dual_search`` unless ``fallback`` is off, in which case they raise
    ``NoConvergence``.
    """
    y = np.asarray(y, dtype=float)
    if inner.kind == "whole":
        return project_ball(y, ball)
    single = y.ndim == 1
    Y = np.atleast_2d(y)
    n, d = Y.shape
    centers = np.broadcast_to(ball.center, (n, d))
    radii = np.broadcast_to(np.asarray(ball.radius, dtype=float), (n,))

    # rows whose ball projection already lies in K are exact after one projection
    x = _scale_into_ball(Y, centers, radii)
    active = np.flatnonzero(~inner.contains(x, 0.0))
    x[active] = Y[active]
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    u_prev = np.full_like(x, np.nan)
    for _ in range(max_iters):
        if active.size == 0:
            break
        xa, pa, qa = x[active], p[active], q[active]
        ca, ra = centers[active], radii[active]
        u = _scale_into_ball(xa + pa, ca, ra)
        p_new = xa + pa - u
        xn = inner.project(u + qa)
        q_new = u + qa - xn
        # the primal iterate alone can stall at a corner while the corrections still move
        done = ((row_norms(xn - xa) < tol) & (row_norms(u - u_prev[active]) < tol)
                & (row_norms(p_new - pa) < tol) & (row_norms(q_new - qa) < tol)
                & (row_norms(xn - ca) <= ra + tol))
        x[active], p[active], q[active], u_prev[active] = xn, p_new, q_new, u
        active = active[~done]
        if active.size == 0:
            break
    else:
        if not fallback:
            raise NoConvergence(max_iters)
        x[active] = _dual_search(inner, Y[active], centers[active], radii[active], tol, max_iters)
    return x[0] if single else x


def _dual_search(inner: Domain, Y, centers, radii, tol, max_iters):
    """Exact projection onto inner ∩ ball through its one-dimensional dual.

    For a multiplier mu >= 0 on the ball constraint the Lagrangian minimiser over
    ``inner`` is P_K((y + mu c) / (1 + mu)), and ||x(mu) - c|| is nonincreasing in
    mu.  Bisecting on t = mu / (1 + mu) in [0, 1] finds the multiplier that puts
    x on the sphere.  Only valid when ``inner.project`` is exact.
    """
    if inner.kind == "intersection":
        raise NoConvergence(max_iters)

    def point(t):
        return inner.project((1 - t)[:, None] * Y + t[:, None] * centers)

    def gap(t):
        return row_norms(point(t) - centers) - radii

    n = Y.shape[0]
    lo, hi = np.zeros(n), np.ones(n)
    if np.any(gap(hi) > tol):
        # the nearest point of K to the center is outside the ball: empty intersection
        raise NoConvergence(max_iters)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        inside = gap(mid) <= 0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return point(hi)


# ---------------------------------------------------------------------------
# Domain factories


def _as_tol(tol):
    return 1e-9 if tol is None else tol


def whole_space(dim: int) -> Domain:
    def contains(v, tol=None):
        v = np.asarray(v, dtype=float)
        return np.all(np.isfinite(v), axis=-1)

    return Domain(project=project_whole_space, contains=contains, descriptor=("whole",), dim=dim)


def ball(center, radius) -> Domain:
    spec = BallSpec(center, radius)

    def project(v):
        return project_ball(v, spec)

    def contains(v, tol=None):
        return row_norms(np.asarray(v, dtype=float) - spec.center) <= spec.radius + _as_tol(tol)

    return Domain(project=project, contains=contains, descriptor=("ball", spec.center, spec.radius),
                  dim=spec.center.shape[-1])


def box(lo, hi) -> Domain:
    lo, hi = _check_box(lo, hi)

    def project(v):
        return project_box(v, lo, hi)

    def contains(v, tol=None):
        v = np.asarray(v, dtype=float)
        t = _as_tol(tol)
        return np.all((v >= lo - t) & (v <= hi + t), axis=-1)

    return Domain(project=project, contains=contains, descriptor=("box", lo, hi), dim=lo.size)


def simplex(dim: int) -> Domain:
    def contains(v, tol=None):
        v = np.asarray(v, dtype=float)
        t = _as_tol(tol)
        return np.all(v >= -t, axis=-1) & (np.abs(np.sum(v, axis=-1) - 1.0) <= t)

    return Domain(project=project_simplex, contains=contains, descriptor=("simplex", dim), dim=dim)


def intersection_with_ball(inner: Domain, center, radius, tol: float = DYKSTRA_TOL,
                           max_iters: int = DYKSTRA_MAX_ITERS) -> Domain:
    spec = BallSpec(center, radius)

    def project(v):
        return project_intersection_ball(inner, spec, v, tol=tol, max_iters=max_iters)

    def contains(v, tol_=None):
        t = _as_tol(tol_)
        v = np.asarray(v, dtype=float)
        return inner.contains(v, t) & (row_norms(v - spec.center) <= spec.radius + t)

    return Domain(project=project, contains=contains,
                  descriptor=("intersection", inner, spec.center, spec.radius), dim=inner.dim)


def from_descriptor(desc: dict) -> Domain:
    """Build a domain from a JSON-style description, e.g. ``{"kind": "box", "lo": [...], "hi": [...]}``."""
    kind = desc["kind"]
    if kind == "whole":
        return whole_space(int(desc["dim"]))
    if kind == "ball":
        return ball(desc["center"], desc["radius"])
    if kind == "box":
        return box(desc["lo"], desc["hi"])
    if kind == "simplex":
        return simplex(int(desc["dim"]))
    if kind == "intersection":
        return intersection_with_ball(from_descriptor(desc["inner"]), desc["center"], desc["radius"])
    raise ValueError(f"unknown domain kind {kind!r}")
