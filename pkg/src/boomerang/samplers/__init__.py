"""Event-driven samplers and their trajectory logs."""

from .baselines import MALAResult, as_energy, rescale_velocity_for_comparison, run_bps, run_mala, run_zigzag
from .boomerang import run_boomerang, run_subsampled_boomerang
from .eventlog import EventLog, EventRecord, SamplerConfig
from .factorised import LocalEngine, run_factorised_boomerang

__all__ = [
    "EventLog", "EventRecord", "SamplerConfig", "LocalEngine", "MALAResult", "as_energy",
    "rescale_velocity_for_comparison", "run_bps", "run_mala", "run_zigzag", "run_boomerang",
    "run_subsampled_boomerang", "run_factorised_boomerang",
]
