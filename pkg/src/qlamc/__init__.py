"""Q-learning adaptive modulation and coding for a mmWave link with beam tracking."""

from ._validation import ConfigError
from .agents import LinkAdapter, LookupTableAgent, OllaAgent, QLAmcAgent, QTable
from .beams import Codebook, beam_sweep, dft_codebook
from .channel import ArrayGeometry, ChannelConfig, channel_at, draw_scatterer_set
from .config import RunConfig, load_config, parse_config
from .link import BlerModel, CqiConfig, McsEntry, bler, build_illa_table, mcs_action_set
from .sim import (PhaseConfig, Scenario, generate_trace, run_deployment_phase,
                  run_learning_phase)

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry", "BlerModel", "ChannelConfig", "Codebook", "ConfigError", "CqiConfig",
    "LinkAdapter", "LookupTableAgent", "McsEntry", "OllaAgent", "PhaseConfig", "QLAmcAgent",
    "QTable", "RunConfig", "Scenario", "beam_sweep", "bler", "build_illa_table", "channel_at",
    "dft_codebook", "draw_scatterer_set", "generate_trace", "load_config", "mcs_action_set",
    "parse_config", "run_deployment_phase", "run_learning_phase",
]
