import pytest

from ppal.harness import RunConfig
from ppal.workload import CorpusSpec, generate

SMALL_SPEC = CorpusSpec(n_total=20_000, n_distinct_target=1_500, n_intents=120, slot_vocab=800, seed=7)


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SMALL_SPEC)


@pytest.fixture
def small_config():
    return RunConfig(
        corpus=SMALL_SPEC,
        betas=[0.3, 0.9],
        ks=[1, 20],
        seeds=[1, 2],
        bootstrap_size=200,
        l=4,
        feature_dim=1 << 14,
        eval_every=50,
        refit_every=100,
    )


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion."""

    def record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
