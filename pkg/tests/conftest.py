import pytest

from y1jamlab.experiment import profile_phase


@pytest.fixture(scope="session")
def part_b_profile():
    return profile_phase()


@pytest.fixture(scope="session")
def model(part_b_profile):
    return part_b_profile.model


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
