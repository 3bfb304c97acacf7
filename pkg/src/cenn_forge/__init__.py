"""Compile, simulate and cost small CNNs on a multi-array CeNN accelerator."""

from .core import (
    BoundaryPolicy,
    CeNNArrayState,
    CeNNError,
    InstabilityError,
    PreconditionError,
    Template,
    TemplateError,
    sat,
    settle,
)
from .cost import CostParams, CostReport, analytic_delay, load_cost_params, precision_scale, trace_cost
from .fc_digital import FixedPointFormat, fc_eval
from .netspec import NetworkSpec, SpecError, load_network, load_weights, random_weights, with_weights
from .nonideal import OtaCurve, QuantSpec, default_curve, quantize
from .scheduler import CeNNProgram, HardwareConfig, compile_network, execute, load_hw_config, predict
from .templates import TemplateProgram, run_program

__version__ = "0.1.0"

__all__ = [
    "BoundaryPolicy",
    "CeNNArrayState",
    "CeNNError",
    "CeNNProgram",
    "CostParams",
    "CostReport",
    "FixedPointFormat",
    "HardwareConfig",
    "InstabilityError",
    "NetworkSpec",
    "OtaCurve",
    "PreconditionError",
    "QuantSpec",
    "SpecError",
    "Template",
    "TemplateError",
    "TemplateProgram",
    "analytic_delay",
    "compile_network",
    "default_curve",
    "execute",
    "fc_eval",
    "load_cost_params",
    "load_hw_config",
    "load_network",
    "load_weights",
    "precision_scale",
    "predict",
    "quantize",
    "random_weights",
    "run_program",
    "sat",
    "settle",
    "trace_cost",
    "with_weights",
]
