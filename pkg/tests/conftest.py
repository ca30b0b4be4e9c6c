"""Shared fixtures: one deterministic fixture model/dataset per session."""

import pytest

from mixedquant import generate_fixture

FIXTURE_SEED = 0x5EED


@pytest.fixture(scope="session")
def fixture_pair():
    return generate_fixture(FIXTURE_SEED)


@pytest.fixture(scope="session")
def model(fixture_pair):
    return fixture_pair[0]


@pytest.fixture(scope="session")
def dataset(fixture_pair):
    return fixture_pair[1]
