"""Scenario files, Monte-Carlo sweeps, CSV output and the command-line tool."""

from .runner import ResultRow, TrialStats, run_trial, sweep, write_csv
from .scenario import Scenario, load_scenario, preset, scenario_from_dict

__all__ = ["ResultRow", "TrialStats", "run_trial", "sweep", "write_csv", "Scenario",
           "load_scenario", "preset", "scenario_from_dict"]
