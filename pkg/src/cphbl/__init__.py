"""Budget-constrained edge cache placement with history-aware bandit learning."""

from .config import ConfigError, PolicySpec, Seeds, SystemConfig, evaluation_config, load_config, validate_config
from .harness import RunRecord, run_simulation, sweep, theoretical_bounds
from .oracle import r_star

__all__ = [
    "ConfigError",
    "PolicySpec",
    "RunRecord",
    "Seeds",
    "SystemConfig",
    "evaluation_config",
    "load_config",
    "r_star",
    "run_simulation",
    "sweep",
    "theoretical_bounds",
    "validate_config",
]
