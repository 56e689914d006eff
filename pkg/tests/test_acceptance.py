"""Acceptance criteria 1-9, each at its stated tolerance and runtime budget.

One PASS/FAIL line per criterion is printed in the terminal summary.
"""

import contextlib
import io
import time

import pytest

from forkjoin_tail import validation
from forkjoin_tail.cli import main

SEED = validation.DEFAULT_SEED


def _summarize(report, budget, elapsed):
    failed = [r.name for r in report.results if not r.passed]
    parts = [f"{len(report.results) - len(failed)}/{len(report.results)} checks", f"{elapsed:.1f}s (budget {budget}s)"]
    if failed:
        parts.append("failed: " + "; ".join(failed))
    return ", ".join(parts)


def _criterion(record, number, budget, fn):
    t0 = time.perf_counter()
    report = fn()
    elapsed = time.perf_counter() - t0
    in_time = elapsed < budget
    passed = report.passed and in_time
    record(number, passed, _summarize(report, budget, elapsed))
    for r in report.results:
        print(f"  [{'PASS' if r.passed else 'FAIL'}] {r.name}: observed {r.observed:.6g}, "
              f"predicted {r.predicted:.6g}, tolerance {r.tolerance:.3g} {r.detail}")
    assert report.passed, [r for r in report.results if not r.passed]
    assert in_time, f"criterion {number} took {elapsed:.1f}s, budget {budget}s"


def test_criterion_1_exponent_structure(acceptance_record):
    _criterion(acceptance_record, 1, 1, lambda: validation.check_log(seed=SEED))


def test_criterion_2_convolution(acceptance_record):
    _criterion(acceptance_record, 2, 10, lambda: validation.check_convolution(seed=SEED))


def test_criterion_3_first_passage_toolbox(acceptance_record):
    _criterion(acceptance_record, 3, 30, lambda: validation.check_passage(seed=SEED, simulate=False))


@pytest.mark.slow
def test_criterion_4_exponential_sup_identity(acceptance_record):
    def only_simulated():
        rep = validation.check_passage(seed=SEED, simulate=True)
        rep.results = [r for r in rep.results if r.name.startswith("single-queue")]
        return rep

    _criterion(acceptance_record, 4, 120, only_simulated)


@pytest.mark.slow
def test_criterion_5_clt_regime(acceptance_record):
    _criterion(acceptance_record, 5, 300, lambda: validation.check_clt(seed=SEED))


@pytest.mark.slow
def test_criterion_6_supercritical_trend(acceptance_record):
    _criterion(acceptance_record, 6, 600, lambda: validation.check_above(seed=SEED))


@pytest.mark.slow
def test_criterion_7_critical_prefactor(acceptance_record):
    _criterion(acceptance_record, 7, 600, lambda: validation.check_critical(seed=SEED))


@pytest.mark.slow
def test_criterion_8_subcritical_bracket(acceptance_record):
    _criterion(acceptance_record, 8, 600, lambda: validation.check_below(seed=SEED))


DETERMINISM_COMMANDS = [
    ["simulate", "--n-queues", "4", "16", "--a", "0.6", "2.5", "--reps", "300", "--steps", "256"],
    ["simulate", "--n-queues", "16", "--a", "0.6", "--reps", "300", "--steps", "256", "--bridge"],
    ["simulate", "--n-queues", "16", "--a-grid", "0.5:2.5:1", "--reps", "300", "--steps", "256", "--bridge",
     "--estimator", "tilted"],
    ["simulate", "--n-queues", "8", "--a", "2", "--reps", "300", "--steps", "256", "--tilt-a", "0.8",
     "--tilt-i", "1.1", "--format", "json"],
    ["validate", "--which", "passage", "--reps", "3000"],
    ["validate", "--which", "critical", "--reps", "40"],
]


def _capture(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue().encode()


@pytest.mark.slow
def test_criterion_9_determinism(acceptance_record):
    t0 = time.perf_counter()
    mismatched = []
    for cmd in DETERMINISM_COMMANDS:
        outputs = {threads: _capture([*cmd, "--seed", "31337", "--threads", str(threads)]) for threads in (1, 2, 4)}
        if len({o for o in outputs.values()}) != 1:
            mismatched.append(" ".join(cmd))
    elapsed = time.perf_counter() - t0
    passed = not mismatched and elapsed < 60
    line = f"{len(DETERMINISM_COMMANDS) - len(mismatched)}/{len(DETERMINISM_COMMANDS)} commands identical " \
           f"across --threads 1/2/4, {elapsed:.1f}s (budget 60s)"
    acceptance_record(9, passed, line + (f", mismatched: {mismatched}" if mismatched else ""))
    assert not mismatched
    assert elapsed < 60
