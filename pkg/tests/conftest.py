import os

# compile time dominates every test that touches jax
os.environ.setdefault("XLA_FLAGS", "--xla_backend_optimization_level=0")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "pkg"))


@pytest.fixture(scope="session")
def model():
    from gkblowup.fields import ChartDomain
    from gkblowup.flow import make_local_model

    return make_local_model(0.05, ChartDomain("model", ((-1.2, 1.2),) * 4), step=2.5e-3)


@pytest.fixture(scope="session")
def structure(model):
    from gkblowup.blowup import PotentialSpec, lift_model

    return lift_model(model, PotentialSpec(0.025, 0.2, 0.45, 0.7))


@pytest.fixture(scope="module", autouse=True)
def _release_compiled_kernels():
    # compiled kernels of every module together outgrow a small machine
    yield
    import jax

    from gkblowup.verifier import clear_kernel_cache

    clear_kernel_cache()
    jax.clear_caches()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
