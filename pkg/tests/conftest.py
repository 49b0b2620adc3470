import pytest

from rcbench.ingest import synth_uniform
from rcbench.structures import build_cdag, build_tree

# Acceptance tests append (name, passed, detail) here; printed at the end of the run.
CRITERIA = []


@pytest.fixture(scope="session")
def uniform16():
    return synth_uniform(16, 16)


@pytest.fixture(scope="session")
def fig1(uniform16):
    return build_tree(uniform16), build_cdag(uniform16, 3)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in CRITERIA:
        line = f"{'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
