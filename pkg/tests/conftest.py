from importlib.resources import files

import pytest

from uclf.domain import load_matches, load_teams

DATA = files("uclf") / "data"

# (criterion label, passed, detail) collected by test_acceptance
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def teams():
    return load_teams(DATA / "teams.csv")


@pytest.fixture(scope="session")
def season(teams):
    return load_matches(DATA / "matches.csv", teams)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
