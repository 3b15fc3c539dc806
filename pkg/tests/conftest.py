import pytest

from targetexec.model_core import ModelParams


@pytest.fixture
def baseline():
    return ModelParams()


@pytest.fixture
def section5():
    return ModelParams(
        b=0.0,
        l=1e-4,
        gamma=0.1,
        sigma=0.1,
        phi=1e-3,
        x0=0.0,
        q0=1.0,
        s0=20.0,
        k_lower=19.85,
        h_upper=19.95,
        t_max=1.0,
    )


@pytest.fixture
def quiet(baseline):
    return baseline.with_updates(sigma=0.0)
