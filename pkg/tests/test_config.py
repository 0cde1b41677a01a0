import json

import pytest

from fedsim.client import LOSS_MODE, OPTIMIZER, LocalConfig
from fedsim.config import (
    ExperimentConfig,
    SuiteConfig,
    build_suite,
    config_from_dict,
    config_to_dict,
    load_config,
    validate_experiment,
)
from fedsim.errors import ConfigurationError
from fedsim.server import SCHEDULE, STRATEGY
from fedsim.tasks import SUITE_KIND


def test_defaults():
    cfg = ExperimentConfig()
    assert cfg.server.beta == 0.25
    assert cfg.server.delta_fd == 0.25
    assert cfg.local.lam == 1.0
    assert cfg.suite.server_fraction == 0.05
    assert cfg.seeds == (0,)


def test_from_dict_coerces_enums():
    cfg = config_from_dict({
        'suite': {'kind': 'glyph_images', 'n_classes': 5},
        'local': {'optimizer': 'adam', 'epochs': 10},
        'server': {'strategy': 'fedsim_var2', 'schedule': 'linear_decay'},
        'total_rounds': 7,
        'seeds': [1, 2],
    })
    assert cfg.suite.kind == SUITE_KIND.GLYPH_IMAGES
    assert cfg.suite.n_classes == 5
    assert cfg.local.optimizer == OPTIMIZER.ADAM
    assert cfg.local.epochs == 10
    assert cfg.local.loss_mode == LOSS_MODE.CUSTOM_L2
    assert cfg.server.strategy == STRATEGY.FEDSIM_VAR2
    assert cfg.server.schedule == SCHEDULE.LINEAR_DECAY
    assert cfg.total_rounds == 7
    assert cfg.seeds == (1, 2)


def test_to_dict_is_inverse():
    cfg = ExperimentConfig(local=LocalConfig(beta_local=0.1), seeds=(4, 5), finetune_epochs=0)
    assert config_from_dict(json.loads(json.dumps(config_to_dict(cfg)))) == cfg


@pytest.mark.parametrize('document', [
    {'rounds': 10},
    {'server': {'beta': 0.1, 'step': 0.2}},
    {'local': {'optimizer': 'lbfgs'}},
    {'suite': []},
])
def test_from_dict_fails_closed(document):
    with pytest.raises(ConfigurationError):
        config_from_dict(document)


def test_load_config(tmp_path):
    path = tmp_path / 'experiment.json'
    path.write_text('{"server": {"m": 4}, "eval_every": 5}')
    cfg = load_config(str(path))
    assert cfg.server.m == 4
    assert cfg.eval_every == 5

    path.write_text('{"server": ')
    with pytest.raises(ConfigurationError):
        load_config(str(path))
    path.write_text('[1, 2]')
    with pytest.raises(ConfigurationError):
        load_config(str(path))


@pytest.mark.parametrize('kind', list(SUITE_KIND))
def test_build_suite(kind):
    suite_cfg = SuiteConfig(kind=kind, n_clients=8, samples_per_client=10, eval_samples=2,
                            server_fraction=0.25)
    suite = build_suite(suite_cfg, 0)
    assert suite.suite_kind == kind
    assert suite.n_clients == 6
    assert len(suite.server.partitions) == 2
    assert all(client.support.size == 8 and client.query.size == 2 for client in suite.clients)


def test_validate_experiment(small_experiment):
    suite = build_suite(small_experiment.suite, 0)
    validate_experiment(small_experiment, suite)
    invalid = [
        small_experiment._replace(total_rounds=0),
        small_experiment._replace(eval_m=0),
        small_experiment._replace(seeds=()),
        small_experiment._replace(local=small_experiment.local._replace(batch_size=11)),
        small_experiment._replace(local=small_experiment.local._replace(lam=0.0)),
    ]
    for cfg in invalid:
        with pytest.raises(ConfigurationError):
            validate_experiment(cfg, suite)
