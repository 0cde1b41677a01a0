"""Experiment configuration: immutable settings, a JSON config file and up-front validation."""
import json
from enum import Enum
from logging import getLogger
from typing import Any, Dict, NamedTuple, Optional, Tuple, Type

from fedsim.client import LOSS_MODE, META_STEPS, OPTIMIZER, LocalConfig, validate_local_config
from fedsim.errors import ConfigurationError
from fedsim.server import FO_MODE, SCHEDULE, SO_MODE, STRATEGY, ServerConfig, resolve_strategy
from fedsim.tasks import (
    DEFAULT_EVAL_SAMPLES,
    SUITE_KIND,
    TaskSuite,
    gen_glyph_image_tasks,
    gen_rotated_cluster_tasks,
    gen_sine_tasks,
    reserve_server_partitions,
    split_all_clients,
)

log = getLogger(__name__)

SuiteConfig = NamedTuple(
    'SuiteConfig',
    [
        ('kind', SUITE_KIND),
        ('n_clients', int),
        ('samples_per_client', int),
        ('eval_samples', int),
        ('n_classes', int),  # classification suites only
        ('dirichlet_alpha', float),  # glyph suite only
        ('noise_sigma', float),  # glyph suite only
        ('server_fraction', float),
        ('support_frac', float),
    ],
)
SuiteConfig.__new__.__defaults__ = (  # type: ignore
    SUITE_KIND.SINE_REGRESSION, 100, 50, DEFAULT_EVAL_SAMPLES, 4, 0.1, 0.2, 0.05, 0.8,
)


ExperimentConfig = NamedTuple(
    'ExperimentConfig',
    [
        ('suite', SuiteConfig),
        ('local', LocalConfig),
        ('server', ServerConfig),
        ('total_rounds', int),
        ('eval_every', int),  # 0 disables evaluation
        ('eval_m', int),
        ('finetune_epochs', Optional[int]),  # defaults to the local epochs E
        ('warm_start_epochs', int),  # epochs on the server data before round 0
        ('seeds', Tuple[int, ...]),
        ('output_path', str),
    ],
)
ExperimentConfig.__new__.__defaults__ = (  # type: ignore
    SuiteConfig(), LocalConfig(), ServerConfig(), 100, 1, 10, None, 10, (0,), 'results',
)

_ENUM_FIELDS = {
    'kind': SUITE_KIND,
    'loss_mode': LOSS_MODE,
    'optimizer': OPTIMIZER,
    'meta_steps': META_STEPS,
    'strategy': STRATEGY,
    'fo_mode': FO_MODE,
    'so_mode': SO_MODE,
    'schedule': SCHEDULE,
}  # type: Dict[str, Type[Enum]]

_SECTIONS = {
    'suite': SuiteConfig,
    'local': LocalConfig,
    'server': ServerConfig,
}  # type: Dict[str, Any]


def build_suite(suite_cfg, seed):  # type: (SuiteConfig, int) -> TaskSuite
    """Generate the suite, reserve server partitions and split every client into support/query."""
    if suite_cfg.kind == SUITE_KIND.SINE_REGRESSION:
        suite = gen_sine_tasks(
            suite_cfg.n_clients, suite_cfg.samples_per_client, seed, suite_cfg.eval_samples,
        )
    elif suite_cfg.kind == SUITE_KIND.ROTATED_CLUSTERS:
        suite = gen_rotated_cluster_tasks(
            suite_cfg.n_clients, suite_cfg.samples_per_client, seed, suite_cfg.n_classes,
            suite_cfg.eval_samples,
        )
    else:
        suite = gen_glyph_image_tasks(
            suite_cfg.n_clients, suite_cfg.n_classes, suite_cfg.dirichlet_alpha,
            suite_cfg.noise_sigma, seed, suite_cfg.samples_per_client, suite_cfg.eval_samples,
        )
    suite = reserve_server_partitions(suite, suite_cfg.server_fraction, seed)
    return split_all_clients(suite, suite_cfg.support_frac, seed)


def validate_experiment(cfg, suite):  # type: (ExperimentConfig, TaskSuite) -> None
    """Check every setting that can be checked before round 0."""
    if cfg.total_rounds < 1:
        raise ConfigurationError('total_rounds must be >= 1, got {}'.format(cfg.total_rounds))
    if cfg.eval_every < 0:
        raise ConfigurationError('eval_every must be >= 0, got {}'.format(cfg.eval_every))
    if cfg.eval_m < 1:
        raise ConfigurationError('eval_m must be >= 1, got {}'.format(cfg.eval_m))
    if cfg.finetune_epochs is not None and cfg.finetune_epochs < 0:
        raise ConfigurationError('finetune_epochs must be >= 0')
    if cfg.warm_start_epochs < 0:
        raise ConfigurationError('warm_start_epochs must be >= 0, got {}'.format(
            cfg.warm_start_epochs))
    if not cfg.seeds:
        raise ConfigurationError('at least one seed is required')

    _, lcfg = resolve_strategy(cfg.server, cfg.local)
    validate_local_config(lcfg)
    smallest = min(client.train.size for client in suite.clients)
    if smallest < 2 * lcfg.batch_size:
        raise ConfigurationError('every client needs >= 2 * batch_size = {} train samples, found {}'
                                 .format(2 * lcfg.batch_size, smallest))


def config_from_dict(document):  # type: (Dict[str, Any]) -> ExperimentConfig
    """Build an ExperimentConfig from a nested dict; unknown keys are an error."""
    defaults = ExperimentConfig()
    values = {}  # type: Dict[str, Any]
    for key, value in document.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigurationError('config section {!r} must be a mapping'.format(key))
            values[key] = _section_from_dict(key, value, getattr(defaults, key))
        elif key in ExperimentConfig._fields:
            values[key] = tuple(int(seed) for seed in value) if key == 'seeds' else value
        else:
            raise ConfigurationError('unknown config key {!r}'.format(key))
    return defaults._replace(**values)


def config_to_dict(cfg):  # type: (ExperimentConfig) -> Dict[str, Any]
    """Inverse of config_from_dict, with enums written as their values."""
    document = {}  # type: Dict[str, Any]
    for key in ExperimentConfig._fields:
        value = getattr(cfg, key)
        if key in _SECTIONS:
            document[key] = {
                name: (field.value if isinstance(field, Enum) else field)
                for name, field in value._asdict().items()
            }
        elif key == 'seeds':
            document[key] = list(value)
        else:
            document[key] = value
    return document


def load_config(path):  # type: (str) -> ExperimentConfig
    """Read an ExperimentConfig from a JSON file."""
    with open(path, encoding='utf-8') as handle:
        try:
            document = json.load(handle)
        except ValueError as error:
            raise ConfigurationError('{} is not valid JSON: {}'.format(path, error)) from error
    if not isinstance(document, dict):
        raise ConfigurationError('{} must hold a JSON object'.format(path))
    return config_from_dict(document)


def _section_from_dict(name, document, default):  # type: (str, Dict[str, Any], Any) -> Any
    values = {}  # type: Dict[str, Any]
    for key, value in document.items():
        if key not in default._fields:
            raise ConfigurationError('unknown key {!r} in config section {!r}'.format(key, name))
        if key in _ENUM_FIELDS and value is not None:
            try:
                value = _ENUM_FIELDS[key](value)
            except ValueError as error:
                raise ConfigurationError('invalid {} {!r}'.format(key, value)) from error
        values[key] = value
    return default._replace(**values)
