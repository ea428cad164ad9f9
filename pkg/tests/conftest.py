import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reflectrl.envs import EnvConfig, make_env

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session", params=["graphqa", "gridhouse", "setquery"])
def env(request):
    return make_env(EnvConfig(request.param))


@pytest.fixture(scope="session")
def graphqa():
    return make_env(EnvConfig("graphqa"))


def tasks_for(env, n=20, seed=0):
    return env.generate_tasks(n, np.random.default_rng(seed))
