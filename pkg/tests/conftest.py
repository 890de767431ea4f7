import numpy as np
import pytest

from cgame import SimConfig, generate_dataset


@pytest.fixture(scope="session")
def toy_dataset():
    """Small 2x2-grid dataset shared by training-behavior tests."""
    config = SimConfig(
        rows=2,
        cols=2,
        link_length_m=500.0,
        n_items=60,
        n_timeslices=4,
        slice_s=300.0,
        period_s=1200.0,
        trips_min=80,
        trips_max=120,
        route_cap=10,
    )
    return generate_dataset(config, seed=123)


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
