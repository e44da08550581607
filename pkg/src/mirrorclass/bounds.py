"""Closed-form rate constants, oracle-inequality values, deviation thresholds,
and prior-weighted rates for the mirror descent runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .smd import StepSchedule


@dataclass(frozen=True)
class BoundInputs:
    """Scalar problem parameters the bound formulas consume.

    sigma2, theta, g_bar are only needed by the deviation bound.
    """

    omega: float
    x_bound: float
    rho: float
    k: int
    n: int
    sigma2: float | None = None
    theta: float | None = None
    g_bar: float | None = None

    def __post_init__(self):
        for name in ("omega", "x_bound", "rho"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.k < 2:
            raise ValueError(f"need k >= 2, got {self.k}")
        if self.n < 1:
            raise ValueError(f"need n >= 1, got {self.n}")
        for name in ("sigma2", "g_bar"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive when given, got {v}")
        if self.theta is not None and not self.theta > 0:
            raise ValueError(f"theta must be positive when given, got {self.theta}")


@dataclass(frozen=True)
class ClassPrior:
    """Class probabilities, optionally with an estimate p_hat dominating p.

    The estimated variant requires p(y) <= (1 + epsilon) p_hat(y) for all y.
    """

    p: np.ndarray
    p_hat: np.ndarray | None = None
    epsilon: float | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("prior must be a probability vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("prior entries must be nonnegative and sum to 1")
        object.__setattr__(self, "p", p)
        if self.p_hat is not None:
            if self.epsilon is None or self.epsilon < 0:
                raise ValueError("estimated prior needs epsilon >= 0")
            ph = np.asarray(self.p_hat, dtype=float)
            if ph.shape != p.shape:
                raise ValueError("p_hat must match the shape of p")
            if np.any(ph < 0) or abs(ph.sum() - 1.0) > 1e-12:
                raise ValueError("p_hat entries must be nonnegative and sum to 1")
            if np.any(p > (1.0 + self.epsilon) * ph + 1e-12):
                raise ValueError("domination p <= (1 + epsilon) p_hat fails")
            object.__setattr__(self, "p_hat", ph)
        elif self.epsilon is not None:
            raise ValueError("epsilon given without p_hat")

    @property
    def k(self) -> int:
        return int(self.p.size)


class GeometryConstants(NamedTuple):
    U: float
    G: float


class DeviationBound(NamedTuple):
    threshold: float
    prob: float


@dataclass(frozen=True)
class WeightedParameters:
    """Norm weights b, normalized scorer scales c, and the raw scales c_raw.

    b_y = sqrt(p_y); c_raw_y = p_y^(1/4); c = c_raw / max(c_raw) so that the
    scorer scales satisfy the max-one convention. Classes with zero
    probability get b = c = 0 and are listed (1-indexed) as degenerate.
    """

    b: np.ndarray
    c: np.ndarray
    c_raw: np.ndarray
    degenerate: tuple[int, ...]


def oracle_bound(U: float, G: float, schedule: StepSchedule) -> float:
    """(U^2 + G^2 sum alpha^2 / 2) / sum alpha for the schedule."""
    if not (U > 0 and G > 0):
        raise ValueError(f"U and G must be positive, got U={U}, G={G}")
    if schedule.n is None:
        raise ValueError("schedule does not define a horizon n")
    alphas = schedule.alphas_for(schedule.n)
    total = float(alphas.sum())
    if total <= 0:
        raise ValueError("schedule has no steps")
    return (U**2 + G**2 * float((alphas**2).sum()) / 2.0) / total


def euclid_constants(inp: BoundInputs) -> GeometryConstants:
    """U = omega sqrt(k), G = sqrt(2) X / rho for the product-ball geometry."""
    return GeometryConstants(
        inp.omega * math.sqrt(inp.k), math.sqrt(2.0) * inp.x_bound / inp.rho
    )


def l1l2_constants(inp: BoundInputs) -> GeometryConstants:
    """U = sqrt(e ln(k) omega), G = X / rho for the block-power geometry."""
    if inp.k < 2:
        raise ValueError("block-power constants need k >= 2")
    return GeometryConstants(
        math.sqrt(math.e * math.log(inp.k) * inp.omega), inp.x_bound / inp.rho
    )


def rate_euclid(inp: BoundInputs) -> float:
    """2 omega X / rho * sqrt(k / n)."""
    return 2.0 * inp.omega * inp.x_bound / inp.rho * math.sqrt(inp.k / inp.n)


def rate_l1l2(inp: BoundInputs) -> float:
    """(X / rho) sqrt(2 e omega ln(k) / n)."""
    if inp.k < 2:
        raise ValueError("block-power rate needs k >= 2")
    return inp.x_bound / inp.rho * math.sqrt(2.0 * math.e * inp.omega * math.log(inp.k) / inp.n)


def deviation_probability(theta: float) -> float:
    """e^(1 - theta) + e^(-theta^2 / 4)."""
    return math.exp(1.0 - theta) + math.exp(-(theta**2) / 4.0)


def deviation_bound(
    inp: BoundInputs, schedule: StepSchedule, U: float | None = None
) -> DeviationBound:
    """Excess-risk threshold exceeded with probability at most
    e^(1-theta) + e^(-theta^2/4):

        sum alpha_m gamma_m g^2 + U^2 / sum alpha
        + theta (sqrt(U sigma^2 sum gamma^2) + sum alpha_m gamma_m sigma^2)

    with gamma_m = alpha_m / sum alpha. U defaults to the product-ball value
    omega sqrt(k).
    """
    if inp.sigma2 is None or inp.theta is None or inp.g_bar is None:
        raise ValueError("deviation bound needs sigma2, theta, and g_bar")
    if U is None:
        U = euclid_constants(inp).U
    if schedule.n is None:
        raise ValueError("schedule does not define a horizon n")
    alphas = schedule.alphas_for(schedule.n)
    total = float(alphas.sum())
    gammas = alphas / total
    threshold = (
        float((alphas * gammas).sum()) * inp.g_bar**2
        + U**2 / total
        + inp.theta
        * (
            math.sqrt(U * inp.sigma2 * float((gammas**2).sum()))
            + float((alphas * gammas).sum()) * inp.sigma2
        )
    )
    return DeviationBound(threshold, deviation_probability(inp.theta))


def conservative_sigma2(G: float) -> float:
    """sigma^2 large enough for the exponential-moment assumption under either
    a linear or quadratic reading, given ||g - E g|| <= 2G: max(2G, 4G^2)."""
    if not G > 0:
        raise ValueError(f"G must be positive, got {G}")
    return max(2.0 * G, 4.0 * G**2)


def sqrt_prior_sum(prior: ClassPrior) -> float:
    """B = sum_y sqrt(p_y)."""
    return float(np.sqrt(prior.p).sum())


def rate_weighted(inp: BoundInputs, prior: ClassPrior) -> float:
    """omega X sqrt(2) / (rho sqrt(n)) * sum sqrt(p_y); the estimated-prior
    variant uses sqrt(2 (1 + epsilon)) and p_hat."""
    base = inp.omega * inp.x_bound / (inp.rho * math.sqrt(inp.n))
    if prior.p_hat is not None:
        return base * math.sqrt(2.0 * (1.0 + prior.epsilon)) * float(np.sqrt(prior.p_hat).sum())
    return base * math.sqrt(2.0) * sqrt_prior_sum(prior)


def weighted_step(inp: BoundInputs) -> float:
    """Constant step omega rho / (X sqrt(2 n)) for the prior-weighted run."""
    return inp.omega * inp.rho / (inp.x_bound * math.sqrt(2.0 * inp.n))


def weighted_parameters(prior: ClassPrior) -> WeightedParameters:
    """Norm and scorer weights from the prior: b = sqrt(p), c ~ p^(1/4).

    Uses p_hat when the prior carries an estimate. Zero-probability classes
    come back with zero weights and a degenerate flag; they cannot appear in
    data and must be excluded from any geometry built on b.
    """
    q = prior.p_hat if prior.p_hat is not None else prior.p
    b = np.sqrt(q)
    c_raw = q**0.25
    degenerate = tuple(int(i) + 1 for i in np.flatnonzero(q == 0.0))
    c = c_raw / c_raw.max()
    return WeightedParameters(b=b, c=c, c_raw=c_raw, degenerate=degenerate)


def bound_A(prior: ClassPrior, b: np.ndarray, c: np.ndarray) -> float:
    """The step-constant upper bound

        sum_y [ p_y / b_y + (p_y / c_y^2) max_{y'} (c_{y'}^2 / b_{y'}) ]

    evaluated with norm weights b and raw scorer scales c. Classes with zero
    probability contribute nothing. Equals 2 sum sqrt(p) at c^2 = b = sqrt(p).
    """
    p = prior.p
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if b.shape != p.shape or c.shape != p.shape:
        raise ValueError("b and c must match the prior's length")
    live = p > 0
    if np.any(b[live] <= 0) or np.any(c[live] <= 0):
        raise ValueError("b and c must be positive on classes with positive probability")
    ratio_max = float((c[live] ** 2 / b[live]).max())
    return float((p[live] / b[live] + p[live] / c[live] ** 2 * ratio_max).sum())


@dataclass(frozen=True)
class BoundReport:
    """Evaluated theoretical quantities for one experiment configuration."""

    U: float
    G: float
    alpha: float
    eq2_bound: float
    constant_rate: float
    deviation_threshold: float | None = None
    deviation_prob: float | None = None
    B: float | None = None
    weighted_rate: float | None = None

    def to_dict(self) -> dict:
        return {
            "U": self.U,
            "G": self.G,
            "alpha": self.alpha,
            "eq2_bound": self.eq2_bound,
            "constant_rate": self.constant_rate,
            "deviation_threshold": self.deviation_threshold,
            "deviation_prob": self.deviation_prob,
            "B": self.B,
            "weighted_rate": self.weighted_rate,
        }
