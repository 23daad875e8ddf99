"""Agent-based system-of-systems simulator for urban air mobility networks."""

from .config import ScenarioConfig, config_from_dict, default_scenario_path, load_config
from .orchestrator import RunReport, run_day

__all__ = ["RunReport", "ScenarioConfig", "config_from_dict", "default_scenario_path", "load_config", "run_day"]
__version__ = "0.1.0"
