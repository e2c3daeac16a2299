import json
import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture(scope="session")
def oracle():
    with open(os.path.join(FIXTURES, "oracle_states.json")) as f:
        return json.load(f)


@pytest.fixture(scope="session")
def oracle_cases(oracle):
    return oracle["cases"]


@pytest.fixture(scope="session")
def clean_cases(oracle):
    return [c for c in oracle["cases"] if not c["expect_errors"]]


@pytest.fixture(scope="session")
def corpus_lines():
    with open(os.path.join(FIXTURES, "tle_corpus.txt")) as f:
        return f.read().splitlines()
