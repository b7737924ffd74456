"""Online EV charging management: a drift-plus-penalty purchase game, a
mixed-strategy deadline game, EDF dispatch, and comparison schedulers."""

from .data_io import ScenarioConfig, generate_fleet, load_scenario_series
from .engine import RunResult, run, sweep

__all__ = ["ScenarioConfig", "generate_fleet", "load_scenario_series", "RunResult", "run", "sweep"]
__version__ = "0.1.0"
