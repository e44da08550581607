"""One-vs-all linear scoring, margins, multiclass hinge loss, and its subgradient.

Weights are dense (k, d) arrays: row y holds the scorer for class y. Labels
are 1-indexed in every public signature; array indices are 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class Instance:
    """A feature vector with its 1-indexed class label."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if self.x.ndim != 1:
            raise ValueError(f"instance features must be a vector, got shape {self.x.shape}")
        if int(self.y) != self.y or self.y < 1:
            raise ValueError(f"label must be a positive integer, got {self.y!r}")
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True)
class LossConfig:
    """Hinge margin scale rho and optional per-class scorer scales.

    class_scale, when given, multiplies the score of class y by scale[y-1];
    it must be strictly positive with max entry 1.
    """

    rho: float
    class_scale: np.ndarray | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.class_scale is not None:
            c = np.asarray(self.class_scale, dtype=float)
            if c.ndim != 1:
                raise ValueError("class_scale must be a vector")
            if not np.all(c > 0):
                raise ValueError("class_scale entries must be strictly positive")
            if abs(c.max() - 1.0) > 1e-12:
                raise ValueError(f"class_scale max must equal 1, got {c.max()!r}")
            object.__setattr__(self, "class_scale", c)


class MarginResult(NamedTuple):
    value: float
    competitor: int  # 1-indexed rival achieving the max, lowest index on ties


class EmpiricalRisk(NamedTuple):
    hinge: float
    zero_one: float


@dataclass(frozen=True)
class SubgradientResult:
    """Subgradient of the hinge loss at (instance, w).

    When the hinge is inactive (loss 0) there are no block updates. When
    active, exactly two rows move: the true class row by -(c_y/rho) x and
    the competitor row by +(c_comp/rho) x.
    """

    active: bool
    true_class: int
    competitor: int
    block_updates: tuple[tuple[int, np.ndarray], ...]
    loss: float

    def as_matrix(self, k: int, d: int) -> np.ndarray:
        """Densify into a (k, d) array."""
        g = np.zeros((k, d))
        for label, vec in self.block_updates:
            g[label - 1] += vec
        return g


def _check_weights(x: np.ndarray, w: np.ndarray, cfg: LossConfig) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError(f"weights must be a (k, d) matrix, got shape {w.shape}")
    if x.shape != (w.shape[1],):
        raise ValueError(f"feature dimension {x.shape} does not match weights {w.shape}")
    if cfg.class_scale is not None and cfg.class_scale.shape != (w.shape[0],):
        raise ValueError(
            f"class_scale has {cfg.class_scale.shape[0]} entries for {w.shape[0]} classes"
        )
    return x, w


def score(x: np.ndarray, w: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Per-class scores c_y <x, w_y> as a k-vector."""
    x, w = _check_weights(x, w, cfg)
    s = w @ x
    if cfg.class_scale is not None:
        s = cfg.class_scale * s
    return s


def margin(x: np.ndarray, y: int, w: np.ndarray, cfg: LossConfig) -> MarginResult:
    """True-class score minus the best rival score, with the rival achieving it.

    Ties among rivals break to the smallest class index.
    """
    s = score(x, w, cfg)
    k = s.shape[0]
    if k < 2:
        raise ValueError("margin needs at least two classes")
    if not 1 <= y <= k:
        raise ValueError(f"label {y} outside 1..{k}")
    rivals = s.copy()
    rivals[y - 1] = -np.inf
    j = int(np.argmax(rivals))
    return MarginResult(float(s[y - 1] - rivals[j]), j + 1)


def hinge_loss(m: float, cfg: LossConfig) -> float:
    """max(0, 1 - m/rho)."""
    return max(0.0, 1.0 - m / cfg.rho)


def subgradient(inst: Instance, w: np.ndarray, cfg: LossConfig) -> SubgradientResult:
    """A subgradient of the hinge loss in w at the given instance.

    Inactive hinge (including the kink where the margin equals rho) returns
    the zero subgradient with no block updates.
    """
    m, comp = margin(inst.x, inst.y, w, cfg)
    loss = hinge_loss(m, cfg)
    if loss <= 0.0:
        return SubgradientResult(False, inst.y, comp, (), 0.0)
    c = cfg.class_scale
    c_y = 1.0 if c is None else float(c[inst.y - 1])
    c_comp = 1.0 if c is None else float(c[comp - 1])
    x = np.asarray(inst.x, dtype=float)
    updates = (
        (inst.y, -(c_y / cfg.rho) * x),
        (comp, (c_comp / cfg.rho) * x),
    )
    return SubgradientResult(True, inst.y, comp, updates, loss)


def predict(x: np.ndarray, w: np.ndarray, cfg: LossConfig) -> int:
    """argmax-score label, smallest index on ties."""
    return int(np.argmax(score(x, w, cfg))) + 1


def batch_losses(
    X: np.ndarray, y_idx: np.ndarray, w: np.ndarray, cfg: LossConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized hinge losses and argmax predictions for rows of X.

    y_idx is 0-based. Returns (losses, predicted_idx).
    """
    scores = X @ w.T
    if cfg.class_scale is not None:
        scores = scores * cfg.class_scale
    n = X.shape[0]
    rows = np.arange(n)
    own = scores[rows, y_idx]
    rival_scores = scores.copy()
    rival_scores[rows, y_idx] = -np.inf
    best_rival = rival_scores.max(axis=1)
    losses = np.maximum(0.0, 1.0 - (own - best_rival) / cfg.rho)
    return losses, scores.argmax(axis=1)


def empirical_risk(sample: Sequence[Instance], w: np.ndarray, cfg: LossConfig) -> EmpiricalRisk:
    """Mean hinge loss over the sample, with the 0-1 error of predict alongside."""
    if len(sample) == 0:
        raise ValueError("empirical_risk needs a nonempty sample")
    X = np.stack([inst.x for inst in sample])
    y_idx = np.array([inst.y - 1 for inst in sample])
    w = np.asarray(w, dtype=float)
    losses, preds = batch_losses(X, y_idx, w, cfg)
    return EmpiricalRisk(float(losses.mean()), float((preds != y_idx).mean()))
