import hashlib
from dataclasses import dataclass

import pytest

from lorasec.sim import Scenario, coverage_report, run
from lorasec.sim.metrics import MetricsReport, airtime_fractions
from lorasec.sim.presets import preset, without_attacks

SEEDS = (1, 2, 3, 4, 5)


@dataclass
class Outcome:
    scenario: Scenario
    digest: str
    report: MetricsReport
    airtime: dict
    text: str | None  # kept only for the short presets


def execute(sc: Scenario) -> Outcome:
    log = run(sc)
    text = log.text()
    keep = text if len(log) < 200_000 else None
    return Outcome(sc, hashlib.sha256(text.encode()).hexdigest(), coverage_report(log, sc),
                   airtime_fractions(log, sc.duration_s), keep)


class RunCache:
    """Each (preset, seed, baseline) combination is simulated once per session."""

    def __init__(self) -> None:
        self._done: dict[tuple, Outcome] = {}

    def get(self, name: str, seed: int = 1, baseline: bool = False) -> Outcome:
        key = (name, seed, baseline)
        if key not in self._done:
            sc = preset(name).with_seed(seed)
            if baseline:
                sc = without_attacks(sc)
            self._done[key] = execute(sc)
        return self._done[key]

    def seeds(self, name: str, baseline: bool = False) -> list[Outcome]:
        return [self.get(name, s, baseline) for s in SEEDS]


@pytest.fixture(scope="session")
def runs() -> RunCache:
    return RunCache()


@pytest.fixture
def criterion(request):
    """Print and collect one verdict line, then assert it."""
    lines = request.config.__dict__.setdefault("_criteria_lines", [])

    def check(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_criteria_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
