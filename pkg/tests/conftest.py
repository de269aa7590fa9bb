import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from biirra.data import SyntheticSpec, generate_synthetic_dataset

settings.register_profile("ci", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic_dataset(SyntheticSpec(
        n_identities=8, test_identities=3, images_per_identity=2, texts_per_image=2,
        n_slots=4, n_values=4, grid=(4, 4), max_len=10, seed=3))


@pytest.fixture(scope="session")
def desk_dataset():
    return generate_synthetic_dataset(SyntheticSpec())


def pytest_terminal_summary(terminalreporter):
    lines = {}
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance.py::test_criterion_" not in rep.nodeid:
                continue
            number = int(rep.nodeid.split("test_criterion_")[1][:2])
            detail = [ln for ln in rep.capstdout.splitlines() if ln.startswith("criterion ")]
            # a test that dies before printing still gets a line
            lines[number] = detail[-1] if detail else f"criterion {number}: {'PASS' if outcome == 'passed' else 'FAIL'}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
