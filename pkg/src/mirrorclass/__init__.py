"""Stochastic mirror descent for one-vs-all multiclass margin classification.

Modules: core (loss and subgradient oracle), geometry (d.g.f.s, Bregman
divergences, prox steps), smd (the descent loop and step audits), bounds
(closed-form rates and deviation thresholds), synth (separable task
generation), cli (experiment harness).
"""

from .bounds import BoundInputs, ClassPrior
from .core import Instance, LossConfig
from .geometry import GeometrySpec
from .smd import RunRecord, StepSchedule, constant_step, run
from .synth import Task, make_task, power_law_prior, sample, uniform_prior

__all__ = [
    "BoundInputs",
    "ClassPrior",
    "GeometrySpec",
    "Instance",
    "LossConfig",
    "RunRecord",
    "StepSchedule",
    "Task",
    "constant_step",
    "make_task",
    "power_law_prior",
    "run",
    "sample",
    "uniform_prior",
]
