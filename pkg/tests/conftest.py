"""Shared fixtures: scenario factory and the (expensive) intervention witnesses."""

from __future__ import annotations

import pytest

from percolate import load_params
from percolate.interventions import find_education_witness, find_subsidy_witness


def make_scenario(**overrides) -> dict:
    """Baseline scenario dict; overrides are merged on top."""
    base = {
        "eta": 1.0,
        "eta_prime": 1.0,
        "r": 0.1,
        "rho": 0.5,
        "c_lo": 0.0,
        "c_hi": 1.0,
        "cost": {"type": "linear", "kappa": 0.1},
        "pi": [1.0],
        "n_max": 64,
    }
    base.update(overrides)
    return base


@pytest.fixture
def scenario():
    return make_scenario


@pytest.fixture
def default_params():
    return load_params(make_scenario())


@pytest.fixture(scope="session")
def subsidy_witness():
    return find_subsidy_witness(n_max=128)


@pytest.fixture(scope="session")
def education_witness():
    return find_education_witness(n_max=128)
