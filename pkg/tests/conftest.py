import random

import pytest
from hypothesis import settings

from pdq.cli import load_corpus
from pdq.qcore import parse_query

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def corpus_by_name(corpus):
    return {e["name"]: e for e in corpus}


@pytest.fixture
def rng():
    return random.Random(12345)


def q(text):
    return parse_query(text)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
