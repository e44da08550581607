"""Synthetic margin-separable tasks with known class priors and a certified
zero-risk anchor, plus Monte Carlo risk estimation against them.

Instances are drawn from class-conditional caps around unit class directions:
x = X (cos(phi) u_y + sin(phi) v) with v a random unit vector orthogonal to
u_y and phi uniform on [0, phi_max(y)], where phi_max keeps the margin at the
anchor at least rho_star for every admissible v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bounds import ClassPrior
from .core import Instance, LossConfig, batch_losses
from .geometry import BLOCK_POWER, GeometrySpec, dual_norm, is_feasible, random_feasible

_FRAME_RESTARTS = 8
_PHI_SHAVE = 1.0 - 1e-9  # keeps sampled margins strictly above rho_star


class RiskEstimate(NamedTuple):
    mean: float
    std_error: float


@dataclass(frozen=True)
class Task:
    """A labeled distribution with known prior and a feasible zero-risk anchor.

    frame holds the unit class directions; phi_max the per-class cap width;
    class_scale the scorer scales the margins were certified against (None
    means all ones).
    """

    k: int
    d: int
    x_bound: float
    rho_star: float
    prior: ClassPrior
    anchor: np.ndarray
    seed: int
    frame: np.ndarray
    phi_max: np.ndarray
    class_scale: np.ndarray | None = None


def uniform_prior(k: int) -> ClassPrior:
    return ClassPrior(np.full(k, 1.0 / k))


def power_law_prior(k: int, beta: float) -> ClassPrior:
    """p(i) proportional to i^(-beta), i = 1..k."""
    if k < 2:
        raise ValueError(f"need k >= 2 classes, got {k}")
    w = np.arange(1, k + 1, dtype=float) ** (-beta)
    return ClassPrior(w / w.sum())


def estimated_prior(prior: ClassPrior, epsilon: float) -> ClassPrior:
    """Attach the estimate p_hat = (p + epsilon/k) / (1 + epsilon), which
    satisfies the domination p <= (1 + epsilon) p_hat by construction."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    k = prior.k
    p_hat = (prior.p + epsilon / k) / (1.0 + epsilon)
    return ClassPrior(prior.p, p_hat=p_hat, epsilon=epsilon)


def _class_frame(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Unit class directions: centered orthonormal (pairwise dot -1/(k-1))
    when d >= k, otherwise the most separated of a few random frames."""
    if d >= k:
        basis, _ = np.linalg.qr(rng.normal(size=(d, k)))
        e = basis.T
        u = e - e.mean(axis=0)
        return u / np.linalg.norm(u, axis=1, keepdims=True)
    best, best_mu = None, np.inf
    for _ in range(_FRAME_RESTARTS):
        f = rng.normal(size=(k, d))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        gram = f @ f.T
        np.fill_diagonal(gram, -np.inf)
        mu = gram.max()
        if mu < best_mu:
            best, best_mu = f, mu
    return best


def make_task(
    k: int,
    d: int,
    x_bound: float,
    rho_star: float,
    prior: ClassPrior,
    spec: GeometrySpec,
    seed: int,
    class_scale: np.ndarray | None = None,
) -> Task:
    """Build a task whose anchor is feasible in spec and certifies zero risk
    for any hinge scale rho <= rho_star.

    Raises when rho_star exceeds the margin the construction can guarantee
    for some class with positive probability.
    """
    if spec.k != k or spec.d != d:
        raise ValueError(f"geometry is ({spec.k}, {spec.d}), task wants ({k}, {d})")
    if prior.k != k:
        raise ValueError(f"prior has {prior.k} classes, task wants {k}")
    if not (x_bound > 0 and rho_star > 0):
        raise ValueError("x_bound and rho_star must be positive")
    c = np.ones(k) if class_scale is None else np.asarray(class_scale, dtype=float)
    if c.shape != (k,):
        raise ValueError(f"class_scale must have {k} entries")

    rng = np.random.default_rng([seed, 0xF4A3E])
    frame = _class_frame(k, d, rng)
    scale = spec.omega / k if spec.kind == BLOCK_POWER else spec.omega
    anchor = scale * frame
    if not is_feasible(anchor, spec, tol=1e-9):
        raise ValueError("anchor construction left the feasible set")

    # For x in the class-y cap, rival y' scores at most
    # scale X c_{y'} (cos(phi) <u_y, u_{y'}> + sin(phi)), so the margin is at
    # least scale X (A cos(phi) - B sin(phi)) with A = c_y - c_{y'} <u_y, u_{y'}>
    # and B = c_{y'}; phi_max keeps every rival's bound above rho_star.
    gram = frame @ frame.T
    ratio = rho_star / (scale * x_bound)
    rivals = ~np.eye(k, dtype=bool)
    head = c[:, None] - c[None, :] * gram  # head[i, j]: class i against rival j
    live = prior.p > 0.0
    tight = live[:, None] & rivals & (head <= ratio)
    if np.any(tight):
        i, j = map(int, np.argwhere(tight)[0])
        raise ValueError(
            f"rho_star={rho_star} exceeds the guaranteed anchor margin of class "
            f"{i + 1} against rival {j + 1}: need rho_star < scale * x_bound * "
            f"(c_y - c_r <u_y, u_r>) = {scale:.6g} * {x_bound:.6g} * "
            f"{head[i, j]:.6g} = {scale * x_bound * head[i, j]:.6g}"
        )
    amp = np.hypot(head, c[None, :])
    with np.errstate(invalid="ignore"):
        phis = np.arccos(np.minimum(ratio / amp, 1.0)) - np.arctan2(c[None, :], head)
    phis[~rivals] = np.inf
    phi_max = np.where(live, phis.min(axis=1) * _PHI_SHAVE, 0.0)
    return Task(
        k=k,
        d=d,
        x_bound=x_bound,
        rho_star=rho_star,
        prior=prior,
        anchor=anchor,
        seed=seed,
        frame=frame,
        phi_max=phi_max,
        class_scale=None if class_scale is None else c,
    )


def sample_arrays(task: Task, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """n instances as arrays: features (n, d) with norm exactly x_bound, and
    0-based labels (n,). Deterministic in (task.seed, seed)."""
    if n < 0:
        raise ValueError(f"sample size must be nonnegative, got {n}")
    rng = np.random.default_rng([task.seed, seed, 0x5A3B1])
    if n == 0:
        return np.zeros((0, task.d)), np.zeros(0, dtype=int)
    y = rng.choice(task.k, size=n, p=task.prior.p)
    phi = rng.uniform(0.0, 1.0, size=n) * task.phi_max[y]
    u = task.frame[y]
    v = rng.normal(size=(n, task.d))
    v -= (v * u).sum(axis=1, keepdims=True) * u
    nv = np.linalg.norm(v, axis=1)
    while np.any(nv < 1e-12):
        bad = nv < 1e-12
        v[bad] = rng.normal(size=(int(bad.sum()), task.d))
        v[bad] -= (v[bad] * u[bad]).sum(axis=1, keepdims=True) * u[bad]
        nv = np.linalg.norm(v, axis=1)
    v /= nv[:, None]
    x = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v
    x *= task.x_bound / np.linalg.norm(x, axis=1, keepdims=True)
    # pull any 1-ulp overshoot back inside the ball
    for _ in range(3):
        nx = np.linalg.norm(x, axis=1)
        over = nx > task.x_bound
        if not np.any(over):
            break
        x[over] *= (task.x_bound / nx[over])[:, None]
    return x, y


def sample(task: Task, n: int, seed: int) -> list[Instance]:
    """n i.i.d. instances with 1-indexed labels."""
    X, y = sample_arrays(task, n, seed)
    return [Instance(X[i], int(y[i]) + 1) for i in range(n)]


def loss_config_for(task: Task, rho: float) -> LossConfig:
    """The loss the task's margins were certified against, at hinge scale rho."""
    return LossConfig(rho=rho, class_scale=task.class_scale)


def estimate_risk(
    task: Task, w: np.ndarray, cfg: LossConfig, n_mc: int, seed: int
) -> RiskEstimate:
    """Monte Carlo mean of the hinge loss at w over fresh samples, with the
    standard error of the mean."""
    if n_mc < 1:
        raise ValueError(f"need n_mc >= 1 samples, got {n_mc}")
    X, y = sample_arrays(task, n_mc, seed)
    losses, _ = batch_losses(X, y, np.asarray(w, dtype=float), cfg)
    mean = float(losses.mean())
    if n_mc == 1:
        return RiskEstimate(mean, 0.0)
    return RiskEstimate(mean, float(losses.std(ddof=1) / math.sqrt(n_mc)))


def estimate_g_bar(
    task: Task,
    spec: GeometrySpec,
    cfg: LossConfig,
    n_points: int = 32,
    n_mc: int = 2000,
    seed: int = 0,
) -> float:
    """Monte Carlo estimate of max_w ||E g(x, y, w)||_* over random feasible w.

    An estimate only: the max runs over a finite random set of points.
    """
    rng = np.random.default_rng([task.seed, seed, 0x6BA2])
    c = np.ones(task.k) if cfg.class_scale is None else cfg.class_scale
    best = 0.0
    for j in range(n_points):
        w = np.zeros((spec.k, spec.d)) if j == 0 else random_feasible(spec, rng)
        X, y = sample_arrays(task, n_mc, seed=int(rng.integers(2**31)))
        scores = (X @ w.T) * c
        rows = np.arange(n_mc)
        own = scores[rows, y]
        rivals = scores.copy()
        rivals[rows, y] = -np.inf
        comp = rivals.argmax(axis=1)
        active = 1.0 - (own - rivals[rows, comp]) / cfg.rho > 0
        gsum = np.zeros((spec.k, spec.d))
        if np.any(active):
            Xa, ya, ca = X[active], y[active], comp[active]
            np.add.at(gsum, ya, -(c[ya] / cfg.rho)[:, None] * Xa)
            np.add.at(gsum, ca, (c[ca] / cfg.rho)[:, None] * Xa)
        best = max(best, float(dual_norm(gsum / n_mc, spec)))
    return best
