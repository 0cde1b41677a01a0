"""Synthetic non-i.i.d. federated tasks, server-data reservation and support/query splits."""
import json
import math
from enum import Enum
from logging import getLogger
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from fedsim.errors import ConfigurationError
from fedsim.model import ACTIVATION, LOSS_KIND, Batch, ModelSpec, one_hot
from fedsim.utilities import seeding
from fedsim.utilities.glyphs import GLYPH_SIDE_PX, GlyphSet

log = getLogger(__name__)

DEFAULT_EVAL_SAMPLES = 20
SINE_AMPLITUDE_RANGE = (0.1, 5.0)
SINE_PHASE_RANGE = (0.0, math.pi)
SINE_INPUT_RANGE = (-5.0, 5.0)
SINE_HIDDEN = (16, 16)
CLUSTER_RADIUS = 2.0
CLUSTER_STD = 0.5
CLUSTER_HIDDEN = 16
GLYPH_HIDDEN = 32
MIN_SAMPLES_PER_CLIENT = 4

EXPORT_MAGIC = 'FEDSIM-TASKS'
EXPORT_VERSION = 1


class SUITE_KIND(Enum):
    """Which synthetic task family generated a suite."""
    SINE_REGRESSION = 'sine_regression'  # type: str
    ROTATED_CLUSTERS = 'rotated_clusters'  # type: str
    GLYPH_IMAGES = 'glyph_images'  # type: str


ClientPartition = NamedTuple(
    'ClientPartition',
    [
        ('client_id', int),
        ('train', Batch),
        ('eval', Batch),
        ('support', Optional[Batch]),
        ('query', Optional[Batch]),
        ('descriptor', Dict[str, Any]),  # amplitude/phase, rotation angle or label histogram
    ],
)


_ServerDatasetTuple = NamedTuple(
    'ServerDataset',
    [
        ('partitions', Tuple[Batch, ...]),
        ('pooled', Batch),
        ('reserved_ids', Tuple[int, ...]),
    ],
)


class ServerDataset(_ServerDatasetTuple):
    """Whole client partitions held back at the server, plus their concatenation."""

    @property
    def is_empty(self):  # type: () -> bool
        return self.pooled.size == 0

    @staticmethod
    def empty(spec):  # type: (ModelSpec) -> ServerDataset
        return ServerDataset((), Batch.empty(spec.input_dim, spec.output_dim), ())


_TaskSuiteTuple = NamedTuple(
    'TaskSuite',
    [
        ('suite_kind', SUITE_KIND),
        ('clients', Tuple[ClientPartition, ...]),
        ('server', ServerDataset),
        ('model_spec', ModelSpec),
        ('server_fraction', float),
    ],
)


class TaskSuite(_TaskSuiteTuple):
    """A federated population of client partitions sharing one model architecture."""

    @property
    def is_classification(self):  # type: () -> bool
        return self.model_spec.loss_kind == LOSS_KIND.SOFTMAX_CROSS_ENTROPY

    @property
    def n_clients(self):  # type: () -> int
        return len(self.clients)

    def total_samples(self):  # type: () -> int
        """Every sample held by clients (train and eval) and by the server."""
        client_samples = sum(client.train.size + client.eval.size for client in self.clients)
        return client_samples + self.server.pooled.size

    def client(self, client_id):  # type: (int) -> ClientPartition
        for partition in self.clients:
            if partition.client_id == client_id:
                return partition
        raise ConfigurationError('no client with id {}'.format(client_id))


def gen_sine_tasks(
    n_clients,  # type: int
    samples_per_client,  # type: int
    rng_seed,  # type: int
    eval_samples=DEFAULT_EVAL_SAMPLES,  # type: int
):  # type: (...) -> TaskSuite
    """Sine regression: client i fits a_i * sin(x + p_i) on x in [-5, 5]."""
    _check_population(n_clients, samples_per_client, eval_samples)
    rng = seeding.derive_rng(rng_seed, seeding.TASKS)
    spec = ModelSpec((1,) + SINE_HIDDEN + (1,), ACTIVATION.TANH, LOSS_KIND.MSE)

    clients = []  # type: List[ClientPartition]
    for client_id in range(n_clients):
        amplitude = rng.uniform(*SINE_AMPLITUDE_RANGE)
        phase = rng.uniform(*SINE_PHASE_RANGE)
        inputs = rng.uniform(*SINE_INPUT_RANGE, size=(samples_per_client + eval_samples, 1))
        targets = amplitude * np.sin(inputs + phase)
        clients.append(_make_partition(
            client_id, Batch(inputs, targets), samples_per_client,
            {'amplitude': float(amplitude), 'phase': float(phase)},
        ))
    return TaskSuite(
        SUITE_KIND.SINE_REGRESSION, tuple(clients), ServerDataset.empty(spec), spec, 0.0,
    )


def gen_rotated_cluster_tasks(
    n_clients,  # type: int
    samples_per_client,  # type: int
    rng_seed,  # type: int
    n_classes=4,  # type: int
    eval_samples=DEFAULT_EVAL_SAMPLES,  # type: int
):  # type: (...) -> TaskSuite
    """2-D Gaussian clusters on a circle, rotated by a per-client angle."""
    _check_population(n_clients, samples_per_client, eval_samples)
    if n_classes < 2:
        raise ConfigurationError('need at least 2 classes, got {}'.format(n_classes))
    rng = seeding.derive_rng(rng_seed, seeding.TASKS)
    spec = ModelSpec(
        (2, CLUSTER_HIDDEN, n_classes), ACTIVATION.TANH, LOSS_KIND.SOFTMAX_CROSS_ENTROPY,
    )
    base_angles = 2.0 * math.pi * np.arange(n_classes) / n_classes

    clients = []  # type: List[ClientPartition]
    for client_id in range(n_clients):
        rotation = rng.uniform(0.0, 2.0 * math.pi)
        labels = rng.integers(0, n_classes, size=samples_per_client + eval_samples)
        angles = base_angles[labels] + rotation
        centers = CLUSTER_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        inputs = centers + rng.normal(0.0, CLUSTER_STD, size=centers.shape)
        clients.append(_make_partition(
            client_id, Batch(inputs, one_hot(labels, n_classes)), samples_per_client,
            {'rotation': float(rotation)},
        ))
    return TaskSuite(
        SUITE_KIND.ROTATED_CLUSTERS, tuple(clients), ServerDataset.empty(spec), spec, 0.0,
    )


def gen_glyph_image_tasks(
    n_clients,  # type: int
    n_classes,  # type: int
    dirichlet_alpha,  # type: float
    noise_sigma,  # type: float
    rng_seed,  # type: int
    samples_per_client=50,  # type: int
    eval_samples=DEFAULT_EVAL_SAMPLES,  # type: int
):  # type: (...) -> TaskSuite
    """Noisy 8x8 glyph classification with Dirichlet(alpha) label skew per client."""
    _check_population(n_clients, samples_per_client, eval_samples)
    if not dirichlet_alpha > 0:
        raise ConfigurationError('dirichlet_alpha must be positive, got {}'.format(dirichlet_alpha))
    if noise_sigma < 0:
        raise ConfigurationError('noise_sigma must be non-negative, got {}'.format(noise_sigma))
    glyphs = GlyphSet(n_classes)
    rng = seeding.derive_rng(rng_seed, seeding.TASKS)
    spec = ModelSpec(
        (GLYPH_SIDE_PX * GLYPH_SIDE_PX, GLYPH_HIDDEN, n_classes),
        ACTIVATION.TANH,
        LOSS_KIND.SOFTMAX_CROSS_ENTROPY,
    )

    clients = []  # type: List[ClientPartition]
    for client_id in range(n_clients):
        proportions = rng.dirichlet(np.full(n_classes, dirichlet_alpha))
        train_histogram = allocate_counts(proportions, samples_per_client)
        eval_histogram = allocate_counts(proportions, eval_samples)
        train_labels = rng.permutation(np.repeat(np.arange(n_classes), train_histogram))
        eval_labels = rng.permutation(np.repeat(np.arange(n_classes), eval_histogram))
        labels = np.concatenate([train_labels, eval_labels])
        inputs = glyphs.sample(labels, noise_sigma, rng)
        clients.append(_make_partition(
            client_id, Batch(inputs, one_hot(labels, n_classes)), samples_per_client,
            {
                'proportions': [float(value) for value in proportions],
                'label_histogram': [int(count) for count in train_histogram],
            },
        ))
    return TaskSuite(SUITE_KIND.GLYPH_IMAGES, tuple(clients), ServerDataset.empty(spec), spec, 0.0)


def allocate_counts(proportions, total):  # type: (np.ndarray, int) -> np.ndarray
    """Round proportions * total to integers summing to total (largest remainder)."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(int)
    shortfall = total - int(counts.sum())
    if shortfall > 0:
        order = np.argsort(-(raw - counts), kind='stable')
        counts[order[:shortfall]] += 1
    return counts


def reserve_server_partitions(suite, fraction, rng_seed):  # type: (TaskSuite, float, int) -> TaskSuite  # noqa: E501
    """Move ceil(fraction * n) whole client partitions into the server dataset."""
    if not 0 <= fraction < 1:
        raise ConfigurationError('server fraction must lie in [0, 1), got {}'.format(fraction))
    n_reserved = math.ceil(round(fraction * suite.n_clients, 9))
    if suite.n_clients - n_reserved < 2:
        raise ConfigurationError('reserving {} of {} partitions leaves fewer than 2 clients'.format(
            n_reserved, suite.n_clients))

    rng = seeding.derive_rng(rng_seed, seeding.RESERVE)
    chosen = rng.choice(suite.n_clients, size=n_reserved, replace=False)
    reserved_ids = {suite.clients[index].client_id for index in chosen}

    remaining = tuple(client for client in suite.clients if client.client_id not in reserved_ids)
    reserved = sorted(
        (client for client in suite.clients if client.client_id in reserved_ids),
        key=lambda client: client.client_id,
    )
    partitions = suite.server.partitions + tuple(
        Batch.concatenate([client.train, client.eval]) for client in reserved
    )
    pooled = Batch.concatenate((suite.server.pooled,) + partitions[len(suite.server.partitions):])
    reserved_ids = suite.server.reserved_ids + tuple(client.client_id for client in reserved)
    server = ServerDataset(partitions, pooled, reserved_ids)
    log.info('reserved %d of %d partitions as server data (%d samples)',
             n_reserved, suite.n_clients, pooled.size)
    return suite._replace(clients=remaining, server=server, server_fraction=float(fraction))


def split_support_query(partition, support_frac, rng_seed):  # type: (ClientPartition, float, int) -> ClientPartition  # noqa: E501
    """Split the client's train samples into disjoint support and query batches."""
    if not 0 < support_frac < 1:
        raise ConfigurationError('support fraction must lie in (0, 1), got {}'.format(support_frac))
    num_samples = partition.train.size
    num_support = math.ceil(round(support_frac * num_samples, 9))
    if num_support < 1 or num_samples - num_support < 1:
        raise ConfigurationError('client {} has {} train samples, too few to split'.format(
            partition.client_id, num_samples))
    order = np.random.default_rng(rng_seed).permutation(num_samples)
    return partition._replace(
        support=partition.train.take(order[:num_support]),
        query=partition.train.take(order[num_support:]),
    )


def split_all_clients(suite, support_frac, rng_seed):  # type: (TaskSuite, float, int) -> TaskSuite
    """Apply split_support_query to every client with a per-client derived seed."""
    clients = tuple(
        split_support_query(
            client, support_frac, seeding.derive_seed(rng_seed, seeding.SPLIT, client.client_id),
        )
        for client in suite.clients
    )
    return suite._replace(clients=clients)


def export_suite(suite, path):  # type: (TaskSuite, str) -> None
    """Write a suite to a self-describing .npz archive (JSON header plus flat arrays)."""
    arrays = {}  # type: Dict[str, np.ndarray]
    client_headers = []  # type: List[Dict[str, Any]]
    for index, client in enumerate(suite.clients):
        prefix = 'client{}_'.format(index)
        for name in ('train', 'eval', 'support', 'query'):
            batch = getattr(client, name)
            if batch is not None:
                arrays[prefix + name + '_inputs'] = batch.inputs
                arrays[prefix + name + '_targets'] = batch.targets
        client_headers.append({
            'client_id': client.client_id,
            'descriptor': client.descriptor,
            'has_split': client.support is not None,
            'train_samples': client.train.size,
            'eval_samples': client.eval.size,
        })
    for index, partition in enumerate(suite.server.partitions):
        arrays['server{}_inputs'.format(index)] = partition.inputs
        arrays['server{}_targets'.format(index)] = partition.targets

    spec = suite.model_spec
    header = {
        'magic': EXPORT_MAGIC,
        'version': EXPORT_VERSION,
        'suite_kind': suite.suite_kind.value,
        'server_fraction': suite.server_fraction,
        'model_spec': {
            'layer_sizes': list(spec.layer_sizes),
            'activation': spec.activation.value,
            'loss_kind': spec.loss_kind.value,
            'use_bias': spec.use_bias,
        },
        'clients': client_headers,
        'server_reserved_ids': list(suite.server.reserved_ids),
        'server_partitions': len(suite.server.partitions),
    }
    arrays['header'] = np.array(json.dumps(header, sort_keys=True))
    with open(path, 'wb') as handle:
        np.savez(handle, **arrays)


def import_suite(path):  # type: (str) -> TaskSuite
    """Read a suite written by export_suite."""
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive['header']))
        if header.get('magic') != EXPORT_MAGIC:
            raise ConfigurationError('{} is not a task-suite export'.format(path))
        if header.get('version') != EXPORT_VERSION:
            raise ConfigurationError('unsupported task-suite version {}'.format(
                header.get('version')))

        spec_fields = header['model_spec']
        spec = ModelSpec(
            spec_fields['layer_sizes'],
            ACTIVATION(spec_fields['activation']),
            LOSS_KIND(spec_fields['loss_kind']),
            spec_fields['use_bias'],
        )

        def batch(key):  # type: (str) -> Batch
            return Batch(archive[key + '_inputs'], archive[key + '_targets'])

        clients = []  # type: List[ClientPartition]
        for index, client_header in enumerate(header['clients']):
            prefix = 'client{}_'.format(index)
            has_split = client_header['has_split']
            clients.append(ClientPartition(
                client_id=client_header['client_id'],
                train=batch(prefix + 'train'),
                eval=batch(prefix + 'eval'),
                support=batch(prefix + 'support') if has_split else None,
                query=batch(prefix + 'query') if has_split else None,
                descriptor=client_header['descriptor'],
            ))

        partitions = tuple(batch('server{}'.format(index))
                           for index in range(header['server_partitions']))
    if partitions:
        server = ServerDataset(partitions, Batch.concatenate(partitions),
                               tuple(header['server_reserved_ids']))
    else:
        server = ServerDataset.empty(spec)
    return TaskSuite(
        SUITE_KIND(header['suite_kind']), tuple(clients), server, spec,
        float(header['server_fraction']),
    )


def _make_partition(
    client_id,  # type: int
    samples,  # type: Batch
    num_train,  # type: int
    descriptor,  # type: Dict[str, Any]
):  # type: (...) -> ClientPartition
    """The first num_train samples are the train split, the rest the eval split."""
    train = samples.take(np.arange(num_train))
    evaluation = samples.take(np.arange(num_train, samples.size))
    return ClientPartition(client_id, train, evaluation, None, None, descriptor)


def _check_population(n_clients, samples_per_client, eval_samples):  # type: (int, int, int) -> None
    if n_clients < 2:
        raise ConfigurationError('need at least 2 clients, got {}'.format(n_clients))
    if samples_per_client < MIN_SAMPLES_PER_CLIENT:
        raise ConfigurationError('need at least {} samples per client, got {}'.format(
            MIN_SAMPLES_PER_CLIENT, samples_per_client))
    if eval_samples < 1:
        raise ConfigurationError('need at least 1 eval sample per client, got {}'.format(
            eval_samples))
