"""Optimal sense/communicate switching and certainty-equivalent LQG control
over an integrated sensing-and-communication link."""

__version__ = "0.1.0"

from .model import ModeAction, ScenarioConfig, load_scenario, benchmark_scenario  # noqa: E402
from .gains import GainSchedule, compute_gains  # noqa: E402
from .dp import GridSpec, solve_dp  # noqa: E402
from .simulate import monte_carlo, run_episode  # noqa: E402

__all__ = ["ModeAction", "ScenarioConfig", "load_scenario", "benchmark_scenario",
           "GainSchedule", "compute_gains", "GridSpec", "solve_dp", "monte_carlo",
           "run_episode"]
