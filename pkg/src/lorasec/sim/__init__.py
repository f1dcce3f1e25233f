"""Scenario model, event engine, presets and metrics."""

from .engine import EventLog, Simulation, parse_log, run
from .metrics import MetricsReport, coverage_report, expected_counts, rtt_series
from .scenario import BackgroundSource, DeviceSpec, Scenario, ScenarioError, dump_scenario, load_scenario

__all__ = [
    "BackgroundSource",
    "DeviceSpec",
    "EventLog",
    "MetricsReport",
    "Scenario",
    "ScenarioError",
    "Simulation",
    "coverage_report",
    "dump_scenario",
    "expected_counts",
    "load_scenario",
    "parse_log",
    "rtt_series",
    "run",
]
