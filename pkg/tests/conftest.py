import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bpshift.ingest import by_patient, records_from_rows
from bpshift.synth import gen_cohort, preset

settings.register_profile(
    "bpshift",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("bpshift")


@pytest.fixture(scope="session")
def small_cohort():
    """Six learnable-preset patients with twelve segments each, as grouped records."""
    cfg = preset("learnable", n_patients=6, segments_per_patient=12, seed=3)
    rows, truth = gen_cohort(cfg)
    records, dropped = records_from_rows(rows)
    assert not dropped
    return by_patient(records), rows, truth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Acceptance criteria append ``(passed, name, detail)`` here; the lines are
# printed at the end of the session whatever the capture mode.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for passed, name, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
