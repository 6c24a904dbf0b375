"""Shared fixtures: a session-wide cache of identification runs and the
per-criterion verdict lines echoed after the test summary."""

import time
from dataclasses import dataclass

import pytest

from lagid.dynamics import Trajectory, make_dataset, make_system
from lagid.identify import (
    CoefficientVector,
    FitReport,
    LossWeights,
    OptimizerConfig,
    fit,
)
from lagid.metrics import EvalResult, evaluate

_verdicts: list[tuple[int, str]] = []


def _record(num: int, passed: bool, detail: str) -> bool:
    line = "criterion %2d %s  %s" % (num, "PASS" if passed else "FAIL", detail)
    _verdicts.append((num, line))
    print(line)
    return passed


@pytest.fixture(scope="session")
def criterion():
    """Records one pass/fail line per acceptance criterion."""
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_verdicts):
        terminalreporter.write_line(line)


@dataclass(frozen=True)
class CellRun:
    """One identification cell: data, fit, and truth comparison."""

    system: object
    dataset: object
    trajectory: Trajectory
    report: FitReport
    result: EvalResult
    wall: float


@pytest.fixture(scope="session")
def fit_cell():
    """Memoized identification runs keyed by the full cell signature.

    Acceptance criteria share cells (the missing-data comparison reuses
    the clean fits), so one cache keeps the gate inside its runtime
    budgets without hidden state between tests.
    """
    cache: dict[tuple, CellRun] = {}

    def run(system_id: str, noise: float = 0.0, seed: int = 0,
            missing: float = 0.0, beta: float = 1e-4) -> CellRun:
        key = (system_id, float(noise), int(seed), float(missing), float(beta))
        if key not in cache:
            t0 = time.perf_counter()
            # the chaotic system outruns its measurement grid on long spans
            duration = 4.0 if system_id == "chaos_pendulum" else 20.0
            ds, system, traj = make_dataset(
                make_system(system_id), seed, noise_level=noise,
                missing_frac=missing, duration=duration,
            )
            report = fit(ds, system.lib, mode=system.mode,
                         known_index=system.known_index,
                         weights=LossWeights(beta=beta),
                         optimizer=OptimizerConfig(init_coeffs="lstsq"))
            truth = CoefficientVector.from_full(system.true_coeffs,
                                                system.known_index)
            result = evaluate(report.coeffs, truth, system.lib)
            cache[key] = CellRun(system, ds, traj, report, result,
                                 time.perf_counter() - t0)
        return cache[key]

    return run
