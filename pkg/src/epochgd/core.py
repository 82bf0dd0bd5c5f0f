"""Problem abstraction: constants, oracle contracts and the feasible-set contract.

All oracles are vectorised over rows: a point is either a ``(dim,)`` vector or a
``(n, dim)`` stack of independent points (one per trial).  Randomness enters a
stochastic subgradient only through *noise tokens*, drawn from an explicit
``numpy.random.Generator`` independently of the query point.  This lets one
trial's draws be made in blocks while staying bit-identical to a per-step loop.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import (
    MissingOptimum,
    NonPositiveConstant,
    OracleBoundViolation,
    ZeroDimension,
)

NORM_SLACK = 1e-12


def row_norms(v: np.ndarray) -> np.ndarray:
    """Euclidean norm along the last axis (row-wise; identical for 1 or n rows)."""
    return np.sqrt(np.sum(v * v, axis=-1))


@dataclass(frozen=True)
class ProblemSpec:
    """Known constants of a stochastic strongly convex problem.

    ``lambda_hk`` is the quadratic-growth constant: f(x) - f(x*) >= lambda_hk*||x - x*||^2.
    """

    dim: int
    M: float
    G: float
    lambda_hk: float


def validate_problem(spec: ProblemSpec) -> ProblemSpec:
    if spec.dim < 1:
        raise ZeroDimension(f"dim must be >= 1, got {spec.dim}")
    for name in ("M", "G", "lambda_hk"):
        value = getattr(spec, name)
        if not (np.isfinite(value) and value > 0):
            raise NonPositiveConstant(name, value)
    return spec


def lambda_hk_from_standard_strong_convexity(mu: float) -> float:
    """Growth constant implied by mu-strong convexity, f(y) >= f(x) + g.(y-x) + mu/2 ||y-x||^2.

    Taking x = x* (where 0 lies in the subdifferential plus the normal cone) gives
    f(y) - f(x*) >= (mu/2) ||y - x*||^2, hence mu/2.
    """
    if not mu > 0:
        raise NonPositiveConstant("mu", mu)
    return mu / 2.0


@dataclass(frozen=True)
class Domain:
    """A closed convex set K with its Euclidean projection.

    ``descriptor`` is a tagged tuple, e.g. ``("ball", center, radius)``.
    """

    project: Callable[[np.ndarray], np.ndarray]
    contains: Callable[..., Any]
    descriptor: tuple
    dim: int

    @property
    def kind(self) -> str:
        return self.descriptor[0]


@dataclass(frozen=True)
class Optimum:
    x: np.ndarray
    value: float


@dataclass(frozen=True)
class Problem:
    """Oracle bundle for ``min_{x in K} f(x)``.

    ``value_oracle`` and ``exact_subgradient_oracle`` exist for verification only;
    the optimizers read nothing but the stochastic pieces and ``domain.project``.

    ``draw_noise(rng, n)`` returns an array whose first axis indexes n steps of one
    trial; ``gradient_from_noise(x, tokens)`` maps points and matching tokens
    (first axis aligned with the rows of ``x``) to stochastic subgradients.
    """

    spec: ProblemSpec
    value_oracle: Callable[[np.ndarray], Any]
    exact_subgradient_oracle: Callable[[np.ndarray], np.ndarray]
    draw_noise: Callable[[np.random.Generator, int], np.ndarray]
    gradient_from_noise: Callable[[np.ndarray, np.ndarray], np.ndarray]
    optimum: Optional[Optimum] = None
    domain: Optional[Domain] = None
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def stochastic_subgradient_oracle(self, x, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.gradient_from_noise(x[None, :], self.draw_noise(rng, 1))[0]

    def with_optimum(self, x, value) -> "Problem":
        return dataclasses.replace(self, optimum=Optimum(np.asarray(x, dtype=float), float(value)))

    def with_spec(self, **changes) -> "Problem":
        return dataclasses.replace(self, spec=dataclasses.replace(self.spec, **changes))

    def suboptimality(self, x) -> Any:
        if self.optimum is None:
            raise MissingOptimum(f"{self.name} has no recorded optimum")
        return self.value_oracle(x) - self.optimum.value


def assert_norm_bound(ghat: np.ndarray, G: float) -> None:
    """Raise if any stochastic subgradient row exceeds G (verification mode)."""
    norms = row_norms(ghat)
    worst = float(np.max(norms)) if norms.size else 0.0
    if worst > G * (1 + NORM_SLACK) + NORM_SLACK:
        raise OracleBoundViolation(f"stochastic subgradient norm {worst!r} exceeds G={G!r}")


@dataclass
class GrowthReport:
    min_slack: float
    samples: int
    violated: bool


def sample_domain_points(domain: Domain, center, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points of K obtained by projecting Gaussian perturbations of ``center``
    at log-uniformly spread scales."""
    center = np.asarray(center, dtype=float)
    scales = 10.0 ** rng.uniform(-3, 1, size=(n, 1))
    y = center + scales * rng.standard_normal((n, center.shape[-1]))
    return domain.project(y)


def check_growth_condition(problem: Problem, samples: int, seed: int = 0, domain: Domain | None = None,
                           tol: float = 1e-9) -> GrowthReport:
    if problem.optimum is None:
        raise MissingOptimum("growth check needs a known optimum")
    domain = domain or problem.domain
    rng = np.random.default_rng(seed)
    xs = sample_domain_points(domain, problem.optimum.x, samples, rng)
    gap = np.asarray(problem.value_oracle(xs)) - problem.optimum.value
    dist2 = np.sum((xs - problem.optimum.x) ** 2, axis=1)
    slack = gap - problem.spec.lambda_hk * dist2
    m = float(np.min(slack))
    return GrowthReport(min_slack=m, samples=samples, violated=m < -tol)


@dataclass
class UnbiasednessReport:
    max_z: float
    samples: int
    ok: bool


def check_unbiasedness(problem: Problem, x, samples: int = 100_000, seed: int = 0,
                       z_limit: float = 5.0) -> UnbiasednessReport:
    """Compare the empirical mean of ``samples`` stochastic subgradients at ``x``
    with the exact subgradient; each component must sit within z_limit*sd/sqrt(N)."""
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    tokens = problem.draw_noise(rng, samples)
    ghat = problem.gradient_from_noise(np.broadcast_to(x, (samples, x.size)), tokens)
    g = problem.exact_subgradient_oracle(x)
    sd = ghat.std(axis=0, ddof=1)
    err = np.abs(ghat.mean(axis=0) - g)
    se = sd / np.sqrt(samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, err / se, np.where(err > 1e-12, np.inf, 0.0))
    max_z = float(np.max(z))
    return UnbiasednessReport(max_z=max_z, samples=samples, ok=max_z <= z_limit)
