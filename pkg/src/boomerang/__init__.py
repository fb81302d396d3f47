"""Boomerang sampler: piecewise deterministic Monte Carlo with elliptical dynamics."""

from .core import (BoundConstants, ContractError, EnergyTarget, PhaseState, ReferenceMeasure,
                   TargetModel, sample_velocity, u_from_e)
from .dynamics import elliptical_flow, flow_invariant, linear_flow
from .samplers import (EventLog, SamplerConfig, run_boomerang, run_bps, run_factorised_boomerang,
                       run_mala, run_subsampled_boomerang, run_zigzag)

__version__ = "0.1.0"

__all__ = [
    "BoundConstants", "ContractError", "EnergyTarget", "PhaseState", "ReferenceMeasure",
    "TargetModel", "sample_velocity", "u_from_e", "elliptical_flow", "flow_invariant",
    "linear_flow", "EventLog", "SamplerConfig", "run_boomerang", "run_bps",
    "run_factorised_boomerang", "run_mala", "run_subsampled_boomerang", "run_zigzag",
]
