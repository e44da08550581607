"""Experiment configuration: INI-style file format and builders for the
geometry, prior, loss, task, and step schedule of a run.

Parsing is fail-closed: unknown sections or keys are errors, as are missing
required keys, with section.key diagnostics.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds, geometry, synth
from .bounds import BoundInputs, ClassPrior, GeometryConstants
from .geometry import BLOCK_POWER, EUCLIDEAN, WEIGHTED, GeometrySpec
from .smd import StepSchedule, constant_step

PRIOR_KINDS = ("uniform", "power-law")
SCALE_MODES = ("none", "weighted", "weighted-estimated")


class ConfigError(ValueError):
    """A malformed or inconsistent experiment configuration."""


_SCHEMA = {
    "geometry": {"kind", "omega", "block_weights"},
    "task": {"k", "d", "x_bound", "rho_star", "prior", "beta"},
    "loss": {"rho", "class_scale", "epsilon"},
    "run": {"n", "replicates", "base_seed", "n_mc", "audit"},
    "deviation": {"theta", "sigma2", "g_bar"},
}
_REQUIRED = {
    "geometry": {"kind", "omega"},
    "task": {"k", "d", "x_bound", "rho_star", "prior"},
    "loss": {"rho"},
    "run": {"n", "replicates", "base_seed", "n_mc"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    geometry_kind: str
    omega: float
    k: int
    d: int
    x_bound: float
    rho_star: float
    prior_kind: str
    beta: float | None
    rho: float
    scale_mode: str
    epsilon: float | None
    n: int
    replicates: int
    base_seed: int
    n_mc: int
    audit: bool = False
    block_weights: tuple[float, ...] | None = None
    theta: float | None = None
    sigma2: float | None = None
    g_bar: float | None = None

    def __post_init__(self):
        if self.geometry_kind not in geometry.KINDS:
            raise ConfigError(f"geometry.kind must be one of {geometry.KINDS}")
        if self.prior_kind not in PRIOR_KINDS:
            raise ConfigError(f"task.prior must be one of {PRIOR_KINDS}")
        if self.scale_mode not in SCALE_MODES:
            raise ConfigError(f"loss.class_scale must be one of {SCALE_MODES}")
        if self.prior_kind == "power-law" and self.beta is None:
            raise ConfigError("task.beta is required for the power-law prior")
        if self.scale_mode == "weighted-estimated" and self.epsilon is None:
            raise ConfigError("loss.epsilon is required for weighted-estimated scaling")
        if self.replicates < 1:
            raise ConfigError(f"run.replicates must be >= 1, got {self.replicates}")
        if self.n < 0:
            raise ConfigError(f"run.n must be >= 0, got {self.n}")
        if self.n_mc < 1:
            raise ConfigError(f"run.n_mc must be >= 1, got {self.n_mc}")

    def with_k(self, k: int) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(self, k=k)

    def with_seed(self, base_seed: int) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(self, base_seed=base_seed)


def _typed(section: str, key: str, raw: str, kind: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment configuration file."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"config syntax error in {path}: {err}") from err

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    for section, keys in _REQUIRED.items():
        if section not in parser:
            raise ConfigError(f"missing config section [{section}]")
        for key in keys:
            if key not in parser[section]:
                raise ConfigError(f"missing required key {section}.{key}")

    g, t, lo, r = parser["geometry"], parser["task"], parser["loss"], parser["run"]
    dev = parser["deviation"] if "deviation" in parser else {}

    block_weights = None
    if "block_weights" in g:
        try:
            block_weights = tuple(float(v) for v in g["block_weights"].split(","))
        except ValueError:
            raise ConfigError("geometry.block_weights must be comma-separated floats") from None

    return ExperimentConfig(
        geometry_kind=_typed("geometry", "kind", g["kind"], "str"),
        omega=_typed("geometry", "omega", g["omega"], "float"),
        block_weights=block_weights,
        k=_typed("task", "k", t["k"], "int"),
        d=_typed("task", "d", t["d"], "int"),
        x_bound=_typed("task", "x_bound", t["x_bound"], "float"),
        rho_star=_typed("task", "rho_star", t["rho_star"], "float"),
        prior_kind=_typed("task", "prior", t["prior"], "str"),
        beta=_typed("task", "beta", t["beta"], "float") if "beta" in t else None,
        rho=_typed("loss", "rho", lo["rho"], "float"),
        scale_mode=_typed("loss", "class_scale", lo["class_scale"], "str")
        if "class_scale" in lo
        else "none",
        epsilon=_typed("loss", "epsilon", lo["epsilon"], "float") if "epsilon" in lo else None,
        n=_typed("run", "n", r["n"], "int"),
        replicates=_typed("run", "replicates", r["replicates"], "int"),
        base_seed=_typed("run", "base_seed", r["base_seed"], "int"),
        n_mc=_typed("run", "n_mc", r["n_mc"], "int"),
        audit=_typed("run", "audit", r["audit"], "bool") if "audit" in r else False,
        theta=_typed("deviation", "theta", dev["theta"], "float") if "theta" in dev else None,
        sigma2=_typed("deviation", "sigma2", dev["sigma2"], "float") if "sigma2" in dev else None,
        g_bar=_typed("deviation", "g_bar", dev["g_bar"], "float") if "g_bar" in dev else None,
    )


def build_prior(cfg: ExperimentConfig) -> ClassPrior:
    if cfg.prior_kind == "uniform":
        prior = synth.uniform_prior(cfg.k)
    else:
        prior = synth.power_law_prior(cfg.k, cfg.beta)
    if cfg.scale_mode == "weighted-estimated":
        prior = synth.estimated_prior(prior, cfg.epsilon)
    return prior


def build_geometry(cfg: ExperimentConfig, prior: ClassPrior) -> GeometrySpec:
    weights = None
    if cfg.geometry_kind == WEIGHTED:
        if cfg.block_weights is not None:
            if len(cfg.block_weights) != cfg.k:
                raise ConfigError(
                    f"geometry.block_weights has {len(cfg.block_weights)} entries for k={cfg.k}"
                )
            weights = np.asarray(cfg.block_weights)
        else:
            params = bounds.weighted_parameters(prior)
            if params.degenerate:
                raise ConfigError(
                    f"prior gives zero weight to classes {params.degenerate}; "
                    "weighted geometry needs strictly positive block weights"
                )
            weights = params.b
    elif cfg.block_weights is not None:
        raise ConfigError("geometry.block_weights only apply to weighted-euclidean")
    return GeometrySpec(cfg.geometry_kind, cfg.omega, cfg.k, cfg.d, block_weights=weights)


def build_loss(cfg: ExperimentConfig, prior: ClassPrior):
    from .core import LossConfig

    if cfg.scale_mode == "none":
        return LossConfig(rho=cfg.rho)
    params = bounds.weighted_parameters(prior)
    if params.degenerate:
        raise ConfigError(
            f"prior gives zero weight to classes {params.degenerate}; "
            "class scaling needs strictly positive probabilities"
        )
    return LossConfig(rho=cfg.rho, class_scale=params.c)


def bound_inputs(cfg: ExperimentConfig) -> BoundInputs:
    return BoundInputs(
        omega=cfg.omega,
        x_bound=cfg.x_bound,
        rho=cfg.rho,
        k=cfg.k,
        n=max(cfg.n, 1),
        sigma2=cfg.sigma2,
        theta=cfg.theta,
        g_bar=cfg.g_bar,
    )


def geometry_constants(cfg: ExperimentConfig, spec: GeometrySpec, loss) -> GeometryConstants:
    """U and G for the configured geometry.

    The weighted kind takes U from the capacity and bounds the dual
    subgradient norm by (X/rho) sqrt(2 max_y c_y^2 / b_y).
    """
    inp = bound_inputs(cfg)
    if spec.kind == EUCLIDEAN:
        return bounds.euclid_constants(inp)
    if spec.kind == BLOCK_POWER:
        return bounds.l1l2_constants(inp)
    c = np.ones(cfg.k) if loss.class_scale is None else loss.class_scale
    g_sup = inp.x_bound / inp.rho * math.sqrt(2.0 * float((c**2 / spec.block_weights).max()))
    return GeometryConstants(math.sqrt(geometry.capacity(spec)), g_sup)


def build_schedule(cfg: ExperimentConfig, spec: GeometrySpec, loss) -> StepSchedule:
    """Constant schedule: the prior-weighted step for scaled runs, otherwise
    sqrt(2) U / (G sqrt(n)) from the geometry constants."""
    n = max(cfg.n, 1)
    if cfg.scale_mode != "none":
        return StepSchedule("constant", alpha=bounds.weighted_step(bound_inputs(cfg)), n=n)
    U, G = geometry_constants(cfg, spec, loss)
    return constant_step(U, G, n)
