"""Stochastic mirror descent: streaming prox steps, iterate averaging, step audits.

A run starts at the d.g.f. minimizer, takes one prox step per streamed
instance, and maintains the step-size-weighted average of the visited
iterates online. The stream is pulled one instance at a time, after the
current iterate is fixed, so the sampled pair is independent of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import Instance, LossConfig, subgradient
from .geometry import (
    GeometrySpec,
    ProxSolverError,
    bregman,
    dual_norm,
    initial_point,
    prox_step,
    random_feasible,
)

AUDIT_PROBE_COUNT = 20


@dataclass(frozen=True)
class StepSchedule:
    """Constant or per-step positive step sizes.

    Constant schedules carry the horizon n they were sized for; it is used
    by the bound calculators, not enforced on the stream length.
    """

    kind: str  # "constant" | "custom"
    alpha: float | None = None
    alphas: np.ndarray | None = None
    n: int | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.alpha is None or not self.alpha > 0:
                raise ValueError(f"constant schedule needs alpha > 0, got {self.alpha}")
        elif self.kind == "custom":
            if self.alphas is None:
                raise ValueError("custom schedule needs an alphas vector")
            a = np.asarray(self.alphas, dtype=float)
            if a.ndim != 1 or a.size == 0:
                raise ValueError("alphas must be a nonempty vector")
            if not np.all(a > 0):
                raise ValueError("all step sizes must be positive")
            object.__setattr__(self, "alphas", a)
            object.__setattr__(self, "n", int(a.size))
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    def step_at(self, m: int) -> float:
        """Step size for 0-based step index m."""
        if self.kind == "constant":
            return float(self.alpha)
        if m >= self.alphas.size:
            raise ValueError(f"custom schedule has {self.alphas.size} steps, asked for step {m + 1}")
        return float(self.alphas[m])

    def alphas_for(self, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.alpha))
        if self.alphas.size < n:
            raise ValueError(f"custom schedule has {self.alphas.size} steps, need {n}")
        return self.alphas[:n].copy()


def constant_step(U: float, G: float, n: int) -> StepSchedule:
    """The constant schedule alpha = sqrt(2) U / (G sqrt(n))."""
    if not (U > 0 and G > 0):
        raise ValueError(f"U and G must be positive, got U={U}, G={G}")
    if n < 1:
        raise ValueError(f"need n >= 1 steps, got {n}")
    return StepSchedule("constant", alpha=math.sqrt(2.0) * U / (G * math.sqrt(n)), n=n)


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one run: averaged iterate, per-step losses, optional audits.

    When keep_trajectory was requested, iterates holds w^1..w^n (pre-step),
    subgradients the dense g^m, and alphas the realized step sizes.
    """

    final_average: np.ndarray
    step_losses: np.ndarray
    audit_residuals: np.ndarray | None
    seed: int
    steps_taken: int
    iterates: np.ndarray | None = field(default=None, repr=False)
    subgradients: np.ndarray | None = field(default=None, repr=False)
    alphas: np.ndarray | None = field(default=None, repr=False)


def make_audit_probes(
    spec: GeometrySpec, comparator: np.ndarray | None, seed: int
) -> np.ndarray:
    """The fixed probe set for step audits: comparator (when known), the
    origin, and random feasible points drawn once from the run seed."""
    rng = np.random.default_rng([seed, 0xA0D17])
    probes = [np.zeros((spec.k, spec.d))]
    if comparator is not None:
        probes.insert(0, np.asarray(comparator, dtype=float))
    while len(probes) < AUDIT_PROBE_COUNT:
        probes.append(random_feasible(spec, rng))
    return np.stack(probes)


def audit_step_inequality(
    w_m: np.ndarray,
    w_next: np.ndarray,
    g,
    alpha: float,
    probes: np.ndarray,
    spec: GeometrySpec,
) -> float:
    """Worst slack, over the probes, of the per-step prox inequality

        Delta(w, w_next) <= alpha <g, w - w_next> + Delta(w, w_m) - Delta(w_next, w_m)

    Returns min over probes w of rhs - lhs; a correct prox keeps this >= -1e-7.
    """
    if hasattr(g, "as_matrix"):
        g = g.as_matrix(spec.k, spec.d)
    probes = np.asarray(probes, dtype=float)
    lhs = bregman(probes, w_next, spec)
    inner = ((probes - w_next) * g).sum(axis=(-2, -1))
    rhs = alpha * inner + bregman(probes, w_m, spec) - bregman(w_next, w_m, spec)
    return float(np.min(rhs - lhs))


def run(
    stream: Iterable[Instance],
    spec: GeometrySpec,
    schedule: StepSchedule,
    cfg: LossConfig,
    audit: bool = False,
    *,
    seed: int = 0,
    comparator: np.ndarray | None = None,
    keep_trajectory: bool = False,
) -> RunRecord:
    """Run mirror descent over the stream and return the averaged iterate.

    The recorded step losses are the hinge losses at the pre-step iterates,
    and the average is over those same iterates w^1..w^n. Prox failures
    propagate with the failing step index attached.
    """
    w = initial_point(spec)
    avg = w.copy()
    sum_alpha = 0.0
    losses: list[float] = []
    residuals: list[float] = [] if audit else None
    probes = make_audit_probes(spec, comparator, seed) if audit else None
    iterates: list[np.ndarray] = [] if keep_trajectory else None
    gs: list[np.ndarray] = [] if keep_trajectory else None
    used_alphas: list[float] = [] if keep_trajectory else None

    m = 0
    for inst in stream:
        alpha = schedule.step_at(m)
        g = subgradient(inst, w, cfg)
        losses.append(g.loss)
        if keep_trajectory:
            iterates.append(w.copy())
            gs.append(g.as_matrix(spec.k, spec.d))
            used_alphas.append(alpha)
        sum_alpha += alpha
        avg += (alpha / sum_alpha) * (w - avg)
        try:
            w_next = prox_step(w, g, alpha, spec)
        except ProxSolverError as err:
            raise ProxSolverError(f"step {m + 1}: {err}", err.residual) from err
        if audit:
            residuals.append(audit_step_inequality(w, w_next, g, alpha, probes, spec))
        w = w_next
        m += 1

    return RunRecord(
        final_average=avg,
        step_losses=np.asarray(losses),
        audit_residuals=None if residuals is None else np.asarray(residuals),
        seed=seed,
        steps_taken=m,
        iterates=None if iterates is None else np.stack(iterates) if iterates else np.zeros((0, spec.k, spec.d)),
        subgradients=None if gs is None else np.stack(gs) if gs else np.zeros((0, spec.k, spec.d)),
        alphas=None if used_alphas is None else np.asarray(used_alphas),
    )


def recompute_average(record: RunRecord) -> np.ndarray:
    """Weighted average of the stored trajectory; needs keep_trajectory."""
    if record.iterates is None or record.alphas is None:
        raise ValueError("run was not recorded with keep_trajectory=True")
    if record.steps_taken == 0:
        return record.final_average.copy()
    wts = record.alphas / record.alphas.sum()
    return np.tensordot(wts, record.iterates, axes=1)


def summed_inequality_residual(record: RunRecord, w: np.ndarray, spec: GeometrySpec) -> float:
    """Slack of the summed step inequality at comparator w:

        0 <= sum_m alpha_m <g^m, w - w^m> + 1/2 sum_m alpha_m^2 ||g^m||_*^2
             + Delta(w, w^1)

    with the dual norm of the run's geometry. Needs keep_trajectory.
    """
    if record.iterates is None:
        raise ValueError("run was not recorded with keep_trajectory=True")
    if record.steps_taken == 0:
        return float(bregman(w, initial_point(spec), spec))
    inner = ((w - record.iterates) * record.subgradients).sum(axis=(-2, -1))
    gnorms = dual_norm(record.subgradients, spec)
    total = (
        float((record.alphas * inner).sum())
        + 0.5 * float((record.alphas**2 * gnorms**2).sum())
        + float(bregman(w, record.iterates[0], spec))
    )
    return total
