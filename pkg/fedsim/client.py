"""Client-side local optimization.

client_update runs SGD on the proximal loss f_i(phi) + lam/2 |phi - theta|^2 starting at theta;
client_update_basic drops the proximal term. perfedavg_fo_update and fedmeta_update return a
locally meta-updated global model for the two MAML-style baselines.
"""
from enum import Enum
from logging import getLogger
from typing import Iterator, NamedTuple, Optional, Tuple

import numpy as np

from fedsim.errors import ConfigurationError, NumericError
from fedsim.model import Batch, ModelSpec
from fedsim.tasks import ClientPartition
from fedsim.utilities import seeding
from fedsim.utilities.counters import GradientCounter
from fedsim.utilities.hessian import hvp_hessian_free
from fedsim.utilities.vectors import ParamVector

log = getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class LOSS_MODE(Enum):
    """Which local objective the client minimizes."""
    CUSTOM_L2 = 'custom_l2'  # type: str
    BASIC = 'basic'  # type: str


class META_STEPS(Enum):
    """How many meta steps the local-meta baselines take per round."""
    SINGLE = 'single'  # type: str  # one step on the whole support and query splits
    EPOCHS = 'epochs'  # type: str  # one step per support mini-batch, E epochs


class OPTIMIZER(Enum):
    """Client optimizer; oracle-tested code paths use SGD."""
    SGD = 'sgd'  # type: str
    ADAM = 'adam'  # type: str


LocalConfig = NamedTuple(
    'LocalConfig',
    [
        ('alpha', float),  # client step size
        ('lam', float),  # proximal regularization strength
        ('epochs', int),
        ('batch_size', int),
        ('loss_mode', LOSS_MODE),
        ('optimizer', OPTIMIZER),
        ('beta_local', Optional[float]),  # meta step of the local-meta baselines
        ('hvp_delta', float),  # finite-difference step of the FedMeta HVP
        ('meta_steps', META_STEPS),
    ],
)
LocalConfig.__new__.__defaults__ = (  # type: ignore
    0.01, 1.0, 5, 10, LOSS_MODE.CUSTOM_L2, OPTIMIZER.SGD, None, 1e-3, META_STEPS.SINGLE,
)


def validate_local_config(cfg):  # type: (LocalConfig) -> None
    """Raise a ConfigurationError if cfg breaks a LocalConfig invariant."""
    if not cfg.alpha > 0:
        raise ConfigurationError('client step size must be positive, got {}'.format(cfg.alpha))
    if cfg.lam < 0:
        raise ConfigurationError('regularization strength must be >= 0, got {}'.format(cfg.lam))
    if cfg.epochs < 1:
        raise ConfigurationError('local epochs must be >= 1, got {}'.format(cfg.epochs))
    if cfg.batch_size < 1:
        raise ConfigurationError('batch size must be >= 1, got {}'.format(cfg.batch_size))
    if cfg.loss_mode == LOSS_MODE.CUSTOM_L2 and not cfg.lam > 0:
        raise ConfigurationError('custom_l2 loss requires a positive regularization strength')
    if not cfg.hvp_delta > 0:
        raise ConfigurationError('hvp_delta must be positive, got {}'.format(cfg.hvp_delta))


def client_update(
    partition,  # type: ClientPartition
    theta,  # type: ParamVector
    cfg,  # type: LocalConfig
    spec,  # type: ModelSpec
    rng_seed,  # type: int
    counter=None,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    """Run E epochs of mini-batch descent on the proximal loss and return phi_E.

    Each step uses grad f_i(phi; batch) + lam * (phi - theta). lam == 0 is accepted and
    then matches client_update_basic bit for bit.
    """
    if cfg.loss_mode != LOSS_MODE.CUSTOM_L2:
        raise ConfigurationError('client_update needs loss_mode custom_l2, got {}'.format(
            cfg.loss_mode.value))
    if cfg.lam < 0:
        raise ConfigurationError('regularization strength must be >= 0, got {}'.format(cfg.lam))
    return _local_descent(partition, theta, cfg, spec, rng_seed, cfg.lam, counter)


def client_update_basic(
    partition,  # type: ClientPartition
    theta,  # type: ParamVector
    cfg,  # type: LocalConfig
    spec,  # type: ModelSpec
    rng_seed,  # type: int
    counter=None,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    """Run E epochs of plain mini-batch descent on the client loss, starting at theta."""
    if cfg.loss_mode != LOSS_MODE.BASIC:
        raise ConfigurationError('client_update_basic needs loss_mode basic, got {}'.format(
            cfg.loss_mode.value))
    return _local_descent(partition, theta, cfg, spec, rng_seed, 0.0, counter)


def perfedavg_fo_update(
    partition,  # type: ClientPartition
    theta,  # type: ParamVector
    cfg,  # type: LocalConfig
    spec,  # type: ModelSpec
    rng_seed,  # type: int
    counter=None,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    """Per-FedAvg, first-order meta steps on the global model.

    theta <- theta - beta_local * grad f(theta - alpha grad f(theta; S); Q)

    The second-order term is dropped. By default this is a single step on the whole support
    and query splits; meta_steps=epochs takes one step per support mini-batch for E epochs.
    """
    return _local_meta_descent(partition, theta, cfg, spec, rng_seed, counter, second_order=False)


def fedmeta_update(
    partition,  # type: ClientPartition
    theta,  # type: ParamVector
    cfg,  # type: LocalConfig
    spec,  # type: ModelSpec
    rng_seed,  # type: int
    counter=None,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    """FedMeta: full MAML step theta <- theta - beta_local * (g_q - alpha * H_S(theta) g_q).

    The Hessian-vector product is computed Hessian-free from two support gradients. Steps are
    scheduled as in perfedavg_fo_update.
    """
    return _local_meta_descent(partition, theta, cfg, spec, rng_seed, counter, second_order=True)


def minibatches(data, batch_size, rng):  # type: (Batch, int, np.random.Generator) -> Iterator[Batch]  # noqa: E501
    """Yield the batch in shuffled mini-batches without replacement (last one may be short)."""
    order = rng.permutation(data.size)
    for start in range(0, data.size, batch_size):
        yield data.take(order[start:start + batch_size])


def batches_per_epoch(num_samples, batch_size):  # type: (int, int) -> int
    return -(-num_samples // batch_size)


class _Sgd:
    def __init__(self, step_size):  # type: (float) -> None
        self.step_size = step_size

    def step(self, params, grad):  # type: (ParamVector, ParamVector) -> ParamVector
        return params - self.step_size * grad


class _Adam:
    def __init__(self, step_size):  # type: (float) -> None
        self.step_size = step_size
        self._first = None  # type: Optional[np.ndarray]
        self._second = None  # type: Optional[np.ndarray]
        self._steps = 0

    def step(self, params, grad):  # type: (ParamVector, ParamVector) -> ParamVector
        if self._first is None or self._second is None:
            self._first = np.zeros_like(params)
            self._second = np.zeros_like(params)
        self._steps += 1
        self._first = ADAM_BETA1 * self._first + (1.0 - ADAM_BETA1) * grad
        self._second = ADAM_BETA2 * self._second + (1.0 - ADAM_BETA2) * grad * grad
        first_hat = self._first / (1.0 - ADAM_BETA1 ** self._steps)
        second_hat = self._second / (1.0 - ADAM_BETA2 ** self._steps)
        return params - self.step_size * first_hat / (np.sqrt(second_hat) + ADAM_EPSILON)


def _local_descent(
    partition,  # type: ClientPartition
    theta,  # type: ParamVector
    cfg,  # type: LocalConfig
    spec,  # type: ModelSpec
    rng_seed,  # type: int
    lam,  # type: float
    counter,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    _check_shapes(theta, spec)
    counter = counter if counter is not None else GradientCounter()
    optimizer = _Adam(cfg.alpha) if cfg.optimizer == OPTIMIZER.ADAM else _Sgd(cfg.alpha)

    phi = theta.copy()
    for epoch in range(cfg.epochs):
        rng = seeding.derive_rng(rng_seed, seeding.EPOCH, epoch)
        try:
            for batch in minibatches(partition.train, cfg.batch_size, rng):
                grad = counter.gradient(spec, phi, batch)
                # the proximal pull towards theta vanishes for the basic loss
                if lam:
                    grad = grad + lam * (phi - theta)
                phi = optimizer.step(phi, grad)
        except NumericError as error:
            raise error.with_context(epoch=epoch, client_id=partition.client_id) from error
        if not np.all(np.isfinite(phi)):
            raise NumericError('non-finite local parameters', epoch=epoch,
                               client_id=partition.client_id)
    return phi


def _local_meta_descent(
    partition,  # type: ClientPartition
    theta,  # type: ParamVector
    cfg,  # type: LocalConfig
    spec,  # type: ModelSpec
    rng_seed,  # type: int
    counter,  # type: Optional[GradientCounter]
    second_order,  # type: bool
):  # type: (...) -> ParamVector
    _check_shapes(theta, spec)
    support, query = _require_split(partition)
    if cfg.beta_local is None:
        raise ConfigurationError('local meta-updates need beta_local to be set')
    counter = counter if counter is not None else GradientCounter()
    beta_local = cfg.beta_local

    if cfg.meta_steps == META_STEPS.SINGLE:
        try:
            params = _meta_step(theta, support, query, cfg, beta_local, spec, counter, second_order)
        except NumericError as error:
            raise error.with_context(client_id=partition.client_id) from error
        if not np.all(np.isfinite(params)):
            raise NumericError('non-finite local parameters', client_id=partition.client_id)
        return params

    params = theta.copy()
    for epoch in range(cfg.epochs):
        rng = seeding.derive_rng(rng_seed, seeding.EPOCH, epoch)
        support_batches = list(minibatches(support, cfg.batch_size, rng))
        query_batches = list(minibatches(query, cfg.batch_size, rng))
        try:
            for step, support_batch in enumerate(support_batches):
                query_batch = query_batches[step % len(query_batches)]
                params = _meta_step(params, support_batch, query_batch, cfg, beta_local, spec,
                                    counter, second_order)
        except NumericError as error:
            raise error.with_context(epoch=epoch, client_id=partition.client_id) from error
        if not np.all(np.isfinite(params)):
            raise NumericError('non-finite local parameters', epoch=epoch,
                               client_id=partition.client_id)
    return params


def _meta_step(
    params,  # type: ParamVector
    support,  # type: Batch
    query,  # type: Batch
    cfg,  # type: LocalConfig
    beta_local,  # type: float
    spec,  # type: ModelSpec
    counter,  # type: GradientCounter
    second_order,  # type: bool
):  # type: (...) -> ParamVector
    """params - beta_local * meta-gradient, after an inner step of size alpha on support."""
    adapted = params - cfg.alpha * counter.gradient(spec, params, support)
    query_grad = counter.gradient(spec, adapted, query)
    meta_grad = query_grad
    if second_order:
        hvp = hvp_hessian_free(counter.bind(spec, support), params, query_grad, cfg.hvp_delta)
        meta_grad = query_grad - cfg.alpha * hvp
    return params - beta_local * meta_grad


def _require_split(partition):  # type: (ClientPartition) -> Tuple[Batch, Batch]
    if partition.support is None or partition.query is None:
        raise ConfigurationError('client {} has no support/query split'.format(partition.client_id))
    return partition.support, partition.query


def _check_shapes(theta, spec):  # type: (ParamVector, ModelSpec) -> None
    if theta.ndim != 1 or len(theta) != spec.param_count:
        raise ConfigurationError('expected a parameter vector of length {}, got shape {}'.format(
            spec.param_count, theta.shape))
