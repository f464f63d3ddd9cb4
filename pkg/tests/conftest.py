import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lutkan import CompileConfig, compile_model, synth_dataset, synth_model
from lutkan.runtime import warm_up

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def small_model():
    return synth_model([4, 3, 1], seed=42)


@pytest.fixture(scope="session")
def small_dataset(small_model):
    return synth_dataset(small_model, 1000, seed=7)


@pytest.fixture(scope="session")
def small_compiled(small_model):
    compiled = compile_model(small_model, CompileConfig(lut_size=8))
    warm_up(compiled)
    return compiled


@pytest.fixture(scope="session")
def wide_model():
    # the deployment-scale topology used by the latency and quantization gates
    return synth_model([78, 32, 16, 1], seed=7)


def pytest_addoption(parser):
    parser.addoption(
        "--skip-slow", action="store_true", default=False,
        help="skip the long-running acceptance checks",
    )


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    marker = pytest.mark.skip(reason="--skip-slow given")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(marker)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance check")


def assert_arrays_equal(a, b):
    __tracebackhide__ = True
    assert np.array_equal(np.asarray(a), np.asarray(b))
