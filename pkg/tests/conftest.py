import pytest

from telebridge.core import PipelineConfig
from telebridge.evalharness import load_scenarios
from telebridge.gateway import Resources
from telebridge.resources import data_path

TABLE5_QUERY = (
    "Dr. Ramirez reports real-time heart rate data from patient John Smith's wearable "
    "(ID: WM-47B-22, IP: 10.24.1.15) stopped updating in the ICU."
)
TABLE5_EXPERT = (
    "The issue matches the Nmfaf_3daDataManagement_Deconfigure operation (3GPP Rel-18). "
    "The MFAF has terminated the mapping between the analytics stream and the notification endpoint, "
    "halting outbound data flow. RSRP is -85 dBm and PRB Utilization is 42%, so the radio link is healthy. "
    "Check MFAF configuration for outbound notification mapping failures."
)

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")


@pytest.fixture(scope="session")
def res() -> Resources:
    return Resources.scripted()


@pytest.fixture(scope="session")
def cfg() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture(scope="session")
def fixture200():
    return load_scenarios(data_path("scenarios", "fixture200.jsonl"))
