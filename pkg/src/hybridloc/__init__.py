"""Hybrid near/far-field multi-surface user localization."""

from .config import ScenarioConfig, desk_config, load_config
from .errors import HybridLocError
from .protocol import rmse, run_protocol, run_trial

__all__ = [
    "HybridLocError",
    "ScenarioConfig",
    "desk_config",
    "load_config",
    "rmse",
    "run_protocol",
    "run_trial",
]
__version__ = "0.1.0"
