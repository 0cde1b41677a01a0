import numpy as np
import pytest

from fedsim.client import LOSS_MODE, LocalConfig
from fedsim.config import ExperimentConfig, SuiteConfig
from fedsim.model import Batch, ModelSpec
from fedsim.server import ServerConfig
from fedsim.tasks import SUITE_KIND, ClientPartition, ServerDataset, TaskSuite, gen_sine_tasks

# f(w) = 1/4 * (w - 1)^2, i.e. a = 0.5 and c = 1 in 1/2 * a * (w - c)^2
QUADRATIC_A = 0.5
QUADRATIC_C = 1.0


def quadratic_batch():
    return Batch(np.array([[1.0], [0.0]]), np.array([[1.0], [0.0]]))


def quadratic_partition(client_id=0):
    batch = quadratic_batch()
    return ClientPartition(client_id, batch, batch, batch, batch, {})


@pytest.fixture
def quadratic_spec():
    return ModelSpec((1, 1), use_bias=False)


@pytest.fixture
def quadratic_suite(quadratic_spec):
    """One quadratic client; the server holds the same two samples."""
    batch = quadratic_batch()
    server = ServerDataset((batch,), batch, (99,))
    return TaskSuite(
        SUITE_KIND.SINE_REGRESSION, (quadratic_partition(),), server, quadratic_spec, 0.5,
    )


@pytest.fixture
def converging_config():
    """Full-batch SGD run long enough to reach the proximal minimizer."""
    return LocalConfig(alpha=0.1, lam=1.0, epochs=500, batch_size=2, loss_mode=LOSS_MODE.CUSTOM_L2)


@pytest.fixture
def sine_suite():
    return gen_sine_tasks(n_clients=6, samples_per_client=20, rng_seed=3, eval_samples=5)


@pytest.fixture
def small_experiment():
    return ExperimentConfig(
        suite=SuiteConfig(n_clients=6, samples_per_client=20, eval_samples=5, server_fraction=0.2),
        local=LocalConfig(alpha=0.02, lam=1.0, epochs=1, batch_size=10),
        server=ServerConfig(beta=0.1, m=3, server_batch_size=8),
        total_rounds=3,
        eval_every=1,
        eval_m=2,
        seeds=(0,),
    )
