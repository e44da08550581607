"""Distance-generating functions, Bregman divergences, feasible sets, and prox steps.

Three geometries over block matrices w in R^{k x d} (one block per class):

  euclidean-product   psi(w) = 1/2 sum_i ||w_i||^2      W = {max_i ||w_i|| <= omega}
  block-power         psi(w) = kappa sum_i ||w_i||^q    W = {sum_i ||w_i|| <= omega}
                      with q = 1 + 1/ln k, kappa = e ln k / q
  weighted-euclidean  psi(w) = 1/2 sum_i b_i ||w_i||^2  W = {max_i ||w_i|| <= omega}

All value/grad/divergence functions broadcast over leading batch axes, so a
(P, k, d) stack of points evaluates in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EUCLIDEAN = "euclidean-product"
BLOCK_POWER = "block-power"
WEIGHTED = "weighted-euclidean"
KINDS = (EUCLIDEAN, BLOCK_POWER, WEIGHTED)

_BISECT_TOL = 1e-10
_BISECT_MAX_ITER = 200


class ProxSolverError(RuntimeError):
    """Inner prox solver failed to converge; carries the constraint residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class GeometrySpec:
    """A geometry: d.g.f. kind, set radius omega, shape (k, d), optional block weights.

    The block-power exponent q = 1 + 1/ln k and coefficient kappa = e ln k / q
    are derived from k, never stored.
    """

    kind: str
    omega: float
    k: int
    d: int
    block_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown geometry kind {self.kind!r}, expected one of {KINDS}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.k < 2:
            raise ValueError(f"need k >= 2 classes, got {self.k}")
        if self.d < 1:
            raise ValueError(f"need d >= 1 features, got {self.d}")
        if self.kind == WEIGHTED:
            if self.block_weights is None:
                raise ValueError("weighted-euclidean geometry requires block_weights")
            b = np.asarray(self.block_weights, dtype=float)
            if b.shape != (self.k,):
                raise ValueError(f"block_weights shape {b.shape} does not match k={self.k}")
            if not np.all(b > 0):
                raise ValueError("block_weights must be strictly positive")
            object.__setattr__(self, "block_weights", b)
        elif self.block_weights is not None:
            raise ValueError("block_weights only apply to weighted-euclidean geometry")

    @property
    def power_exponent(self) -> float:
        return 1.0 + 1.0 / math.log(self.k)

    @property
    def power_coeff(self) -> float:
        return math.e * math.log(self.k) / self.power_exponent


def _block_norms(w: np.ndarray) -> np.ndarray:
    return np.linalg.norm(w, axis=-1)


def _check_shape(w: np.ndarray, spec: GeometrySpec) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[-2:] != (spec.k, spec.d):
        raise ValueError(f"weights shape {w.shape} does not match (k, d)=({spec.k}, {spec.d})")
    return w


def dgf_value(w: np.ndarray, spec: GeometrySpec) -> float | np.ndarray:
    """Value of the distance-generating function at w."""
    w = _check_shape(w, spec)
    if spec.kind == EUCLIDEAN:
        return 0.5 * (w * w).sum(axis=(-2, -1))
    if spec.kind == BLOCK_POWER:
        r = _block_norms(w)
        return spec.power_coeff * (r ** spec.power_exponent).sum(axis=-1)
    return 0.5 * (spec.block_weights * (w * w).sum(axis=-1)).sum(axis=-1)


def dgf_grad(w: np.ndarray, spec: GeometrySpec) -> np.ndarray:
    """Gradient of the d.g.f., blockwise. Zero-norm blocks map to zero (q < 2)."""
    w = _check_shape(w, spec)
    if spec.kind == EUCLIDEAN:
        return w.copy()
    if spec.kind == BLOCK_POWER:
        q, kap = spec.power_exponent, spec.power_coeff
        r = _block_norms(w)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, kap * q * r ** (q - 2.0), 0.0)
        return scale * w
    return spec.block_weights[:, None] * w


def bregman(w1: np.ndarray, w2: np.ndarray, spec: GeometrySpec) -> float | np.ndarray:
    """Bregman divergence of the d.g.f. between w1 and w2.

    Euclidean and weighted kinds use the exact quadratic form; block-power
    evaluates psi(w1) - psi(w2) - <grad psi(w2), w1 - w2>.
    """
    w1 = _check_shape(w1, spec)
    w2 = _check_shape(w2, spec)
    diff = w1 - w2
    if spec.kind == EUCLIDEAN:
        return 0.5 * (diff * diff).sum(axis=(-2, -1))
    if spec.kind == WEIGHTED:
        return 0.5 * (spec.block_weights * (diff * diff).sum(axis=-1)).sum(axis=-1)
    lin = (dgf_grad(w2, spec) * diff).sum(axis=(-2, -1))
    return dgf_value(w1, spec) - dgf_value(w2, spec) - lin


def initial_point(spec: GeometrySpec) -> np.ndarray:
    """Minimizer of the d.g.f. over W: the zero matrix for all three kinds."""
    return np.zeros((spec.k, spec.d))


def capacity(spec: GeometrySpec) -> float:
    """The U^2 constant used in the rate formulas.

    euclidean-product: k omega^2; block-power: e ln(k) omega;
    weighted-euclidean: (sum_i b_i) omega^2 / 2. The block-power value is
    linear in omega by convention of the rate it feeds; compare with
    capacity_exact for the actual range of psi on W.
    """
    if spec.kind == EUCLIDEAN:
        return spec.k * spec.omega**2
    if spec.kind == BLOCK_POWER:
        return math.e * math.log(spec.k) * spec.omega
    return 0.5 * float(spec.block_weights.sum()) * spec.omega**2


def capacity_exact(spec: GeometrySpec) -> float:
    """max psi - min psi over W, in closed form."""
    if spec.kind == EUCLIDEAN:
        return 0.5 * spec.k * spec.omega**2
    if spec.kind == BLOCK_POWER:
        # q > 1, so sum ||w_i||^q is maximal at a single block of full radius
        return spec.power_coeff * spec.omega**spec.power_exponent
    return 0.5 * float(spec.block_weights.sum()) * spec.omega**2


def constraint_value(w: np.ndarray, spec: GeometrySpec) -> float | np.ndarray:
    """Left side of the feasibility constraint (max or sum of block norms)."""
    r = _block_norms(_check_shape(w, spec))
    if spec.kind == BLOCK_POWER:
        return r.sum(axis=-1)
    return r.max(axis=-1)


def is_feasible(w: np.ndarray, spec: GeometrySpec, tol: float = 1e-9) -> bool:
    """Membership in W, up to additive tolerance on the constraint value."""
    return bool(np.all(constraint_value(w, spec) <= spec.omega + tol))


def norm(w: np.ndarray, spec: GeometrySpec) -> float | np.ndarray:
    """The norm the d.g.f. is strongly convex against."""
    r = _block_norms(_check_shape(w, spec))
    if spec.kind == EUCLIDEAN:
        return np.sqrt((r * r).sum(axis=-1))
    if spec.kind == BLOCK_POWER:
        return r.sum(axis=-1)
    return np.sqrt((spec.block_weights * r * r).sum(axis=-1))


def dual_norm(g: np.ndarray, spec: GeometrySpec) -> float | np.ndarray:
    """Dual of norm(): block-l2, max of block norms, or 1/b-weighted block-l2."""
    r = _block_norms(_check_shape(g, spec))
    if spec.kind == EUCLIDEAN:
        return np.sqrt((r * r).sum(axis=-1))
    if spec.kind == BLOCK_POWER:
        return r.max(axis=-1)
    return np.sqrt((r * r / spec.block_weights).sum(axis=-1))


def random_feasible(spec: GeometrySpec, rng: np.random.Generator) -> np.ndarray:
    """A random point of W: random block directions with feasible block norms."""
    w = rng.normal(size=(spec.k, spec.d))
    r = np.linalg.norm(w, axis=1)
    r = np.where(r > 0, r, 1.0)
    dirs = w / r[:, None]
    if spec.kind == BLOCK_POWER:
        radii = rng.dirichlet(np.ones(spec.k)) * spec.omega * rng.uniform()
    else:
        radii = spec.omega * rng.uniform(size=spec.k)
    return radii[:, None] * dirs


def _project_blocks(v: np.ndarray, omega: float) -> np.ndarray:
    """Radial projection of each block onto the omega-ball."""
    r = np.linalg.norm(v, axis=1)
    scale = np.where(r > omega, omega / np.where(r == 0, 1.0, r), 1.0)
    return scale[:, None] * v


def _densify(g, spec: GeometrySpec) -> np.ndarray:
    if hasattr(g, "as_matrix"):
        return g.as_matrix(spec.k, spec.d)
    return _check_shape(np.asarray(g, dtype=float), spec)


def prox_step(w_m: np.ndarray, g, alpha: float, spec: GeometrySpec) -> np.ndarray:
    """argmin over W of Delta(w, w_m) + alpha <g, w - w_m>.

    g may be a SubgradientResult or a dense (k, d) array. Euclidean and
    weighted kinds reduce to a blockwise gradient step with radial projection.
    Block-power reduces to a water-filling problem over block norms, solved
    by bisection on the constraint multiplier.
    """
    if not alpha > 0:
        raise ValueError(f"step size must be positive, got {alpha}")
    w_m = _check_shape(w_m, spec)
    g = _densify(g, spec)
    if spec.kind == EUCLIDEAN:
        return _project_blocks(w_m - alpha * g, spec.omega)
    if spec.kind == WEIGHTED:
        v = w_m - (alpha / spec.block_weights)[:, None] * g
        return _project_blocks(v, spec.omega)
    return _prox_block_power(w_m, g, alpha, spec)


def _prox_block_power(w_m: np.ndarray, g: np.ndarray, alpha: float, spec: GeometrySpec) -> np.ndarray:
    # minimize psi(w) - <z, w> over sum_i ||w_i|| <= omega with
    # z = grad psi(w_m) - alpha g; the optimal block i is collinear with z_i,
    # so it reduces to norms r_i >= 0: min kappa r^q - s_i r, sum r <= omega.
    q, kap = spec.power_exponent, spec.power_coeff
    z = dgf_grad(w_m, spec) - alpha * g
    s = np.linalg.norm(z, axis=1)
    expo = 1.0 / (q - 1.0)  # = ln k

    def radii(lam: float) -> np.ndarray:
        return (np.maximum(s - lam, 0.0) / (kap * q)) ** expo

    r = radii(0.0)
    total = r.sum()
    if not np.isfinite(total):
        raise ProxSolverError("non-finite block norms in prox target", float("inf"))
    if total > spec.omega:
        lo, hi = 0.0, float(s.max())
        for _ in range(_BISECT_MAX_ITER):
            mid = 0.5 * (lo + hi)
            if radii(mid).sum() > spec.omega:
                lo = mid
            else:
                hi = mid
            if hi - lo <= _BISECT_TOL:
                break
        else:
            residual = float(radii(hi).sum() - spec.omega)
            raise ProxSolverError(
                f"constraint multiplier bisection did not reach {_BISECT_TOL} "
                f"after {_BISECT_MAX_ITER} iterations",
                residual,
            )
        r = radii(hi)  # the feasible end of the bracket
    safe = np.where(s == 0, 1.0, s)
    dirs = np.where(s[:, None] > 0, z / safe[:, None], 0.0)
    return r[:, None] * dirs
