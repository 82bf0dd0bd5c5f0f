"""Bundled problem families: noisy quadratics with a planted optimum and
L2-regularised hinge-loss SVM training on libsvm-format data."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp

from .core import Domain, Problem, ProblemSpec, row_norms, validate_problem
from .errors import (
    EmptyDataset,
    NonBinaryLabel,
    NonPositiveConstant,
    OptimumOutsideDomain,
    ParseError,
    ToleranceNotCertified,
)
from .optimizers import EXPECTATION, build_epoch_schedule
from .projections import ball

# ---------------------------------------------------------------------------
# quadratic


def truncated_gaussian_noise(rng: np.random.Generator, n: int, dim: int, sigma: float, bound: float) -> np.ndarray:
    """n draws of N(0, sigma^2 I) conditioned on ||z|| <= bound (rejection resampling).

    The conditional law is symmetric, so it stays zero-mean.
    """
    if sigma == 0:
        return np.zeros((n, dim))
    z = sigma * rng.standard_normal((n, dim))
    bad = row_norms(z) > bound
    while bad.any():
        z[bad] = sigma * rng.standard_normal((int(bad.sum()), dim))
        bad = row_norms(z) > bound
    return z


def make_quadratic(dim: int, a: float, x_star, noise_sigma: float = 0.0, domain_radius: float = 1.0,
                   center=None, noise_bound: Optional[float] = None, M: Optional[float] = None,
                   G: Optional[float] = None) -> Problem:
    """f(x) = a ||x - x*||^2 on K = ball(center, domain_radius).

    The stochastic subgradient is 2a(x - x*) + z with z truncated Gaussian noise,
    ||z|| <= noise_bound (default 3 sigma sqrt(dim)).  Constants default to
    G = 4 a R + noise_bound and M = 4 a R^2; larger values may be supplied.
    """
    if not a > 0:
        raise NonPositiveConstant("a", a)
    if not domain_radius > 0:
        raise NonPositiveConstant("domain_radius", domain_radius)
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    x_star = np.asarray(x_star, dtype=float).reshape(dim)
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(dim)
    offset = float(row_norms(x_star - center))
    if offset > domain_radius:
        raise OptimumOutsideDomain(f"||x* - center|| = {offset} exceeds radius {domain_radius}")
    if noise_bound is None:
        noise_bound = 3.0 * noise_sigma * math.sqrt(dim)
    g_min = 2 * a * (2 * domain_radius) + noise_bound
    m_min = a * (2 * domain_radius) ** 2
    G = g_min if G is None else G
    M = m_min if M is None else M
    if G < g_min:
        raise ValueError(f"G={G} is below the gradient bound {g_min}")
    if M < m_min:
        raise ValueError(f"M={M} is below the value-range bound {m_min}")
    spec = validate_problem(ProblemSpec(dim=dim, M=float(M), G=float(G), lambda_hk=float(a)))

    def value(x):
        d = np.asarray(x, dtype=float) - x_star
        return a * np.sum(d * d, axis=-1)

    def subgradient(x):
        return 2 * a * (np.asarray(x, dtype=float) - x_star)

    def draw_noise(rng, n):
        return truncated_gaussian_noise(rng, n, dim, noise_sigma, noise_bound)

    def gradient_from_noise(x, z):
        return 2 * a * (x - x_star) + z

    if offset > 0:
        start = center - domain_radius * (x_star - center) / offset
    else:
        start = center.copy()
        start[0] += domain_radius
    prob = Problem(spec=spec, value_oracle=value, exact_subgradient_oracle=subgradient, draw_noise=draw_noise,
                   gradient_from_noise=gradient_from_noise, domain=ball(center, domain_radius), name="quadratic",
                   meta={"a": a, "noise_sigma": noise_sigma, "noise_bound": noise_bound, "default_start": start})
    return prob.with_optimum(x_star, 0.0)


# ---------------------------------------------------------------------------
# libsvm data


def sparse_dot(ia, va, ib, vb) -> float:
    """Dot product of two index-sorted sparse vectors by merging their index lists."""
    i = j = 0
    total = 0.0
    while i < len(ia) and j < len(ib):
        if ia[i] == ib[j]:
            total += va[i] * vb[j]
            i += 1
            j += 1
        elif ia[i] < ib[j]:
            i += 1
        else:
            j += 1
    return total


@dataclass(frozen=True)
class Dataset:
    """Labelled sparse examples; ``indices`` are 1-based and strictly increasing per row."""

    labels: np.ndarray
    indices: tuple
    values: tuple
    dim: int

    @property
    def m(self) -> int:
        return len(self.labels)

    def row(self, i):
        return self.indices[i], self.values[i]

    def dot(self, i: int, j: int) -> float:
        return sparse_dot(self.indices[i], self.values[i], self.indices[j], self.values[j])

    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.array([self.dot(i, i) for i in range(self.m)]))

    def to_csr(self) -> sp.csr_matrix:
        indptr = np.cumsum([0] + [len(ix) for ix in self.indices])
        cols = np.concatenate([np.asarray(ix, dtype=np.int64) - 1 for ix in self.indices]) if self.m else []
        vals = np.concatenate([np.asarray(v, dtype=float) for v in self.values]) if self.m else []
        return sp.csr_matrix((vals, cols, indptr), shape=(self.m, self.dim))

    @classmethod
    def from_dense(cls, X, y) -> "Dataset":
        X = np.asarray(X, dtype=float)
        idx, vals = [], []
        for row in X:
            nz = np.flatnonzero(row)
            idx.append(tuple(int(j) + 1 for j in nz))
            vals.append(tuple(float(v) for v in row[nz]))
        return cls(np.asarray(y, dtype=float), tuple(idx), tuple(vals), X.shape[1])


_LABELS = {-1.0: -1.0, 1.0: 1.0, 0.0: -1.0}


def parse_libsvm(lines: Iterable[str], dim: Optional[int] = None) -> Dataset:
    """Parse ``<label> <idx>:<val> ...`` lines. Labels +1/-1 are kept; 0 maps to -1.

    Text after ``#`` is ignored, as are blank lines.
    """
    labels, indices, values = [], [], []
    max_idx = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *feats = line.split()
        try:
            label = float(head)
        except ValueError:
            raise ParseError(line_no, f"bad label {head!r}") from None
        if label not in _LABELS:
            raise NonBinaryLabel(line_no, f"label {head!r} is not binary")
        ix, vs = [], []
        prev = 0
        for tok in feats:
            k, sep, v = tok.partition(":")
            if not sep:
                raise ParseError(line_no, f"feature {tok!r} lacks ':'")
            try:
                k_int = int(k)
                v_f = float(v)
            except ValueError:
                raise ParseError(line_no, f"bad feature {tok!r}") from None
            if k_int < 1:
                raise ParseError(line_no, f"feature index {k_int} is not 1-based")
            if k_int <= prev:
                raise ParseError(line_no, f"feature index {k_int} not strictly increasing")
            if not math.isfinite(v_f):
                raise ParseError(line_no, f"non-finite value in {tok!r}")
            prev = k_int
            ix.append(k_int)
            vs.append(v_f)
        max_idx = max(max_idx, prev)
        labels.append(_LABELS[label])
        indices.append(tuple(ix))
        values.append(tuple(vs))
    if dim is None:
        dim = max(max_idx, 1)
    elif dim < max_idx:
        raise ParseError(0, f"feature index {max_idx} exceeds dim {dim}")
    return Dataset(np.asarray(labels, dtype=float), tuple(indices), tuple(values), dim)


def load_libsvm(path: str | os.PathLike, dim: Optional[int] = None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, dim)


def toy_dataset() -> Dataset:
    """Four linearly separable points in the plane."""
    X = [[1.0, 1.0], [2.0, 0.5], [-1.0, -1.0], [-0.5, -2.0]]
    y = [1.0, 1.0, -1.0, -1.0]
    return Dataset.from_dense(X, y)


# ---------------------------------------------------------------------------
# SVM

DENSE_LIMIT = 2_000_000


def make_svm(dataset: Dataset, lambda_reg: float, R_w: Optional[float] = None) -> Problem:
    """F(w) = lambda/2 ||w||^2 + mean_i max(0, 1 - y_i w.x_i) over K = ball(0, R_w).

    R_w defaults to 1/sqrt(lambda), which always contains the minimiser.  The
    stochastic subgradient samples one example uniformly.
    """
    if dataset.m == 0:
        raise EmptyDataset("dataset has no examples")
    if not lambda_reg > 0:
        raise NonPositiveConstant("lambda_reg", lambda_reg)
    R_w = 1.0 / math.sqrt(lambda_reg) if R_w is None else float(R_w)
    if not R_w > 0:
        raise NonPositiveConstant("R_w", R_w)
    m, dim = dataset.m, dataset.dim
    y = dataset.labels
    R_x = float(np.max(dataset.row_norms()))
    X = dataset.to_csr()
    Xd = X.toarray() if m * dim <= DENSE_LIMIT else None
    spec = validate_problem(ProblemSpec(
        dim=dim,
        M=lambda_reg / 2 * R_w ** 2 + 1 + R_x * R_w,
        G=lambda_reg * R_w + R_x if R_x > 0 else lambda_reg * R_w,
        lambda_hk=lambda_reg / 2,
    ))

    Xop = Xd if Xd is not None else X

    def margins(W):
        return (Xop @ W.T) * (y[:, None] if W.ndim == 2 else y)

    def value(w):
        W = np.asarray(w, dtype=float)
        hinge = np.maximum(0.0, 1.0 - margins(W)).mean(axis=0)
        return lambda_reg / 2 * np.sum(W * W, axis=-1) + hinge

    def subgradient(w):
        W = np.asarray(w, dtype=float)
        mg = margins(W)
        coef = np.where(mg < 1, y[:, None] if W.ndim == 2 else y, 0.0)
        return lambda_reg * W - (Xop.T @ coef).T / m

    def draw_noise(rng, n):
        return rng.integers(m, size=n)

    def gradient_from_noise(W, idx):
        yi = y[idx]
        if Xd is not None:
            Xi = Xd[idx]
            mg = yi * np.sum(Xi * W, axis=-1)
            return lambda_reg * W - np.where(mg < 1, yi, 0.0)[:, None] * Xi
        Xi = X[idx]
        mg = yi * np.asarray(Xi.multiply(W).sum(axis=1)).ravel()
        coef = np.where(mg < 1, yi, 0.0)
        return lambda_reg * W - Xi.multiply(coef[:, None]).toarray()

    return Problem(spec=spec, value_oracle=value, exact_subgradient_oracle=subgradient, draw_noise=draw_noise,
                   gradient_from_noise=gradient_from_noise, domain=ball(np.zeros(dim), R_w), name="svm",
                   meta={"lambda_reg": lambda_reg, "R_w": R_w, "R_x": R_x, "default_start": np.zeros(dim)})


# ---------------------------------------------------------------------------
# deterministic reference solve


@dataclass
class ReferenceSolution:
    x: np.ndarray
    value: float
    certified_gap: float
    updates: int
    problem: Problem


def reference_optimum(problem: Problem, tol: float, domain: Domain | None = None, x1=None,
                      max_updates: int = 2_000_000) -> ReferenceSolution:
    """Full-batch epoch-wise projected subgradient descent with averaging.

    With exact subgradients the epoch argument is deterministic, so after
    ceil(log2(M/tol)) epochs the averaged point is within M/2^k <= tol of the
    optimum value.  The budget is fixed before running; if it exceeds
    ``max_updates`` the tolerance cannot be certified and nothing is run.
    """
    domain = domain or problem.domain
    schedule = build_epoch_schedule(problem.spec, tol, EXPECTATION)
    if schedule.total_updates > max_updates:
        raise ToleranceNotCertified(
            f"certifying tol={tol} needs {schedule.total_updates} updates (> {max_updates})")
    if x1 is None:
        x1 = problem.meta.get("default_start", domain.project(np.zeros(problem.spec.dim)))
    x = np.asarray(x1, dtype=float).copy()
    sub = problem.exact_subgradient_oracle
    project = domain.project
    for ep in schedule.epochs:
        total = np.zeros_like(x)
        for _ in range(ep.T):
            total += x
            x = project(x - ep.eta * sub(x))
        x = total / ep.T
    f_ref = float(problem.value_oracle(x))
    return ReferenceSolution(x=x, value=f_ref, certified_gap=min(schedule.final_target, problem.spec.M),
                             updates=schedule.total_updates, problem=problem.with_optimum(x, f_ref))
