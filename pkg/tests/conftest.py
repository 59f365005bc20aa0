"""Shared test config: acceptance result lines and cross-test state.

Acceptance tests record one line each; the terminal summary prints them
after the run so the verdict survives output capture.
"""

import pytest

ACCEPTANCE_LINES = []


def record_acceptance(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((name, bool(ok), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {name}: {detail}")


@pytest.fixture(scope="session")
def shared_state():
    """Mutable session store, mainly the expensive trained model."""
    return {}
