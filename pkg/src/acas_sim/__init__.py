"""Simulation and detection library for semi-assisted E6 signal authentication."""
from .batch import SampleBatch, read_batch, write_batch
from .signal_gen import CodeSequence, DynamicsParams, SignalParams, generate_samples, los_range
from .config import ScenarioConfig, load_scenario
from .runner import CampaignSummary, run_campaign

__all__ = [
    "CampaignSummary",
    "CodeSequence",
    "DynamicsParams",
    "SampleBatch",
    "ScenarioConfig",
    "SignalParams",
    "generate_samples",
    "load_scenario",
    "los_range",
    "read_batch",
    "run_campaign",
    "write_batch",
]
