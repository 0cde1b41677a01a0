"""Single-round entry points: build the server for a strategy and run one round."""
from typing import Tuple

from fedsim.client import LocalConfig
from fedsim.errors import ConfigurationError
from fedsim.records import RoundRecord
from fedsim.server import (
    AVERAGING_STRATEGIES,
    BASELINE_STRATEGIES,
    LOCAL_META_STRATEGIES,
    META_GRADIENT_STRATEGIES,
    FederatedServer,
    RoundOutcome,
    ServerConfig,
)
from fedsim.strategies.averaging import AveragingServer
from fedsim.strategies.local_meta import LocalMetaServer
from fedsim.strategies.meta_gradient import MetaGradientServer
from fedsim.tasks import TaskSuite
from fedsim.utilities.vectors import ParamVector, norm


def make_server(
    suite,  # type: TaskSuite
    scfg,  # type: ServerConfig
    lcfg,  # type: LocalConfig
    rng_seed,  # type: int
    total_rounds=1,  # type: int
):  # type: (...) -> FederatedServer
    """Return the FederatedServer subclass that runs scfg.strategy."""
    if scfg.strategy in META_GRADIENT_STRATEGIES:
        return MetaGradientServer(suite, scfg, lcfg, rng_seed, total_rounds)
    if scfg.strategy in AVERAGING_STRATEGIES:
        return AveragingServer(suite, scfg, lcfg, rng_seed, total_rounds)
    if scfg.strategy in LOCAL_META_STRATEGIES:
        return LocalMetaServer(suite, scfg, lcfg, rng_seed, total_rounds)
    raise ConfigurationError('unknown strategy {}'.format(scfg.strategy))


def to_record(outcome, fed_server, round_index):  # type: (RoundOutcome, FederatedServer, int) -> RoundRecord  # noqa: E501
    """RoundRecord for a round that has not been evaluated yet."""
    return RoundRecord(
        round=round_index,
        strategy=fed_server.strategy,
        seed=fed_server.rng_seed,
        personalized_metric=None,
        theta_norm=norm(outcome.theta),
        client_grad_evals=outcome.client_grad_evals,
        server_grad_evals=outcome.server_grad_evals,
        beta_used=outcome.beta_used,
        higher_is_better=fed_server.suite.is_classification,
    )


def fedsim_round(
    theta_prev,  # type: ParamVector
    suite,  # type: TaskSuite
    scfg,  # type: ServerConfig
    lcfg,  # type: LocalConfig
    round_index,  # type: int
    rng_seed,  # type: int
    total_rounds=1,  # type: int
):  # type: (...) -> Tuple[ParamVector, RoundRecord]
    """One FedSIM-family round (fedsim, its ablations, pfedme_mode)."""
    if scfg.strategy not in META_GRADIENT_STRATEGIES:
        raise ConfigurationError('fedsim_round cannot run {}'.format(scfg.strategy.value))
    fed_server = make_server(suite, scfg, lcfg, rng_seed, total_rounds)
    outcome = fed_server.next_round(theta_prev, round_index)
    return outcome.theta, to_record(outcome, fed_server, round_index)


def baseline_round(
    theta_prev,  # type: ParamVector
    suite,  # type: TaskSuite
    scfg,  # type: ServerConfig
    lcfg,  # type: LocalConfig
    round_index,  # type: int
    rng_seed,  # type: int
    total_rounds=1,  # type: int
):  # type: (...) -> Tuple[ParamVector, RoundRecord]
    """One round of a baseline (fedavg, fedprox, fed_reptile, perfedavg_fo, fedmeta)."""
    if scfg.strategy not in BASELINE_STRATEGIES:
        raise ConfigurationError('baseline_round cannot run {}'.format(scfg.strategy.value))
    fed_server = make_server(suite, scfg, lcfg, rng_seed, total_rounds)
    outcome = fed_server.next_round(theta_prev, round_index)
    return outcome.theta, to_record(outcome, fed_server, round_index)
