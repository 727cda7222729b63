"""Monte Carlo scenarios and the replicate driver."""

from .runner import EstimatorSummary, RunOptions, SimulationReport, run_monte_carlo, summarize
from .scenarios import SCENARIOS, Scenario, get_scenario
