import pytest

from sigfilter.meta_bayes import McmcConfig, MetaModelSpec, fit_meta
from sigfilter.studies import load_bundled_table


@pytest.fixture(scope="session")
def case_table():
    return load_bundled_table()


@pytest.fixture(scope="session")
def case_fit(case_table):
    """Full-length fit on the bundled case-study table, shared across modules."""
    return fit_meta(case_table.rows, MetaModelSpec(), McmcConfig(chains=4, iterations=4000, seed=20170))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
