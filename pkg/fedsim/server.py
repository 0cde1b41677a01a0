"""Server-side meta-gradient estimation and the FederatedServer base class.

Concrete strategies live in fedsim.strategies and subclass FederatedServer, overriding
next_round(). Each round samples m clients, runs their local work (concurrently when
workers > 1) and reduces the results in client-id order.
"""
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from logging import getLogger
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, TypeVar

from fedsim.client import LOSS_MODE, LocalConfig
from fedsim.errors import ConfigurationError
from fedsim.model import Batch, ModelSpec
from fedsim.tasks import ClientPartition, TaskSuite
from fedsim.utilities import seeding
from fedsim.utilities.counters import GradientCounter
from fedsim.utilities.hessian import hvp_hessian_free
from fedsim.utilities.vectors import ParamVector, axpy, check_same_length, mean, norm

log = getLogger(__name__)

T = TypeVar('T')


class STRATEGY(Enum):
    """Every federated method the simulator can run."""
    FEDAVG = 'fedavg'  # type: str
    FEDPROX = 'fedprox'  # type: str
    FED_REPTILE = 'fed_reptile'  # type: str
    PERFEDAVG_FO = 'perfedavg_fo'  # type: str
    FEDMETA = 'fedmeta'  # type: str
    PFEDME_MODE = 'pfedme_mode'  # type: str
    FEDSIM = 'fedsim'  # type: str
    FEDSIM_VAR1 = 'fedsim_var1'  # type: str  # basic local loss
    FEDSIM_VAR2 = 'fedsim_var2'  # type: str  # first-order term from server data
    FEDSIM_VAR3 = 'fedsim_var3'  # type: str  # no second-order term


META_GRADIENT_STRATEGIES = frozenset([
    STRATEGY.FEDSIM,
    STRATEGY.FEDSIM_VAR1,
    STRATEGY.FEDSIM_VAR2,
    STRATEGY.FEDSIM_VAR3,
    STRATEGY.PFEDME_MODE,
])
AVERAGING_STRATEGIES = frozenset([STRATEGY.FEDAVG, STRATEGY.FEDPROX, STRATEGY.FED_REPTILE])
LOCAL_META_STRATEGIES = frozenset([STRATEGY.PERFEDAVG_FO, STRATEGY.FEDMETA])
BASELINE_STRATEGIES = AVERAGING_STRATEGIES | LOCAL_META_STRATEGIES


class FO_MODE(Enum):
    """Source of the first-order meta-gradient term v_i."""
    WEIGHT_DIFF = 'weight_diff'  # type: str
    SERVER_DATA = 'server_data'  # type: str


class SO_MODE(Enum):
    """Source of the second-order term d_i (or none)."""
    SERVER_DATA = 'server_data'  # type: str
    OFF = 'off'  # type: str


class SCHEDULE(Enum):
    """Server step-size schedule."""
    CONSTANT = 'constant'  # type: str
    LINEAR_DECAY = 'linear_decay'  # type: str


ServerConfig = NamedTuple(
    'ServerConfig',
    [
        ('beta', float),  # server step size
        ('delta_fd', float),  # finite-difference step of the Hessian-free estimate
        ('delta_weight', float),  # weight of d_i in v_i - delta_weight * d_i
        ('m', int),  # clients per round
        ('strategy', STRATEGY),
        ('fo_mode', FO_MODE),
        ('so_mode', SO_MODE),
        ('server_batch_size', int),
        ('schedule', SCHEDULE),
        ('pfedme_mix', float),  # mixing rate of pfedme_mode averaging
        ('workers', int),  # concurrent client updates per round
        ('max_correction', Optional[float]),  # cap on |delta_weight * d| / |v|, None disables
    ],
)
ServerConfig.__new__.__defaults__ = (  # type: ignore
    0.25, 0.25, 0.25, 10, STRATEGY.FEDSIM, FO_MODE.WEIGHT_DIFF, SO_MODE.SERVER_DATA, 20,
    SCHEDULE.CONSTANT, 1.0, 1, 0.5,
)


"""First-order term v, optional second-order term d and their combination."""
MetaGradientParts = NamedTuple(
    'MetaGradientParts',
    [
        ('v', ParamVector),
        ('d', Optional[ParamVector]),
        ('meta_grad', ParamVector),
        ('grad_evals_server', int),
    ],
)


"""What a strategy reports back from one round, before evaluation."""
RoundOutcome = NamedTuple(
    'RoundOutcome',
    [
        ('theta', ParamVector),
        ('client_ids', Tuple[int, ...]),
        ('client_grad_evals', int),
        ('server_grad_evals', int),
        ('beta_used', float),
    ],
)


LocalResult = NamedTuple(
    'LocalResult',
    [
        ('client_id', int),
        ('params', ParamVector),  # the client's contribution to the aggregate
        ('client_grad_evals', int),
        ('server_grad_evals', int),
    ],
)


def resolve_strategy(scfg, lcfg):  # type: (ServerConfig, LocalConfig) -> Tuple[ServerConfig, LocalConfig]  # noqa: E501
    """Apply the settings each strategy forces on the generic configuration."""
    strategy = scfg.strategy
    if strategy in (STRATEGY.FEDSIM, STRATEGY.FEDPROX, STRATEGY.PFEDME_MODE):
        lcfg = lcfg._replace(loss_mode=LOSS_MODE.CUSTOM_L2)
    elif strategy in (STRATEGY.FEDSIM_VAR1, STRATEGY.FEDAVG, STRATEGY.FED_REPTILE):
        lcfg = lcfg._replace(loss_mode=LOSS_MODE.BASIC)
    elif strategy == STRATEGY.FEDSIM_VAR2:
        lcfg = lcfg._replace(loss_mode=LOSS_MODE.CUSTOM_L2)
        scfg = scfg._replace(fo_mode=FO_MODE.SERVER_DATA)
    elif strategy == STRATEGY.FEDSIM_VAR3:
        lcfg = lcfg._replace(loss_mode=LOSS_MODE.CUSTOM_L2)
        scfg = scfg._replace(so_mode=SO_MODE.OFF)

    if strategy == STRATEGY.PFEDME_MODE:
        scfg = scfg._replace(so_mode=SO_MODE.OFF)
    if strategy in LOCAL_META_STRATEGIES and lcfg.beta_local is None:
        lcfg = lcfg._replace(beta_local=scfg.beta)
    return scfg, lcfg


def needs_server_data(scfg):  # type: (ServerConfig) -> bool
    """True if the (resolved) configuration reads server data every round."""
    if scfg.strategy not in META_GRADIENT_STRATEGIES or scfg.strategy == STRATEGY.PFEDME_MODE:
        return False
    return scfg.so_mode == SO_MODE.SERVER_DATA or scfg.fo_mode == FO_MODE.SERVER_DATA


def fit_to_suite(scfg, suite):  # type: (ServerConfig, TaskSuite) -> ServerConfig
    """Drop fedsim's second-order term when the suite reserved no server data.

    Only the default fedsim configuration falls back; fedsim_var2 and direct round calls keep
    the ConfigurationError from validate_server_config.
    """
    fallback = (
        scfg.strategy == STRATEGY.FEDSIM
        and scfg.fo_mode == FO_MODE.WEIGHT_DIFF
        and scfg.so_mode == SO_MODE.SERVER_DATA
        and suite.server.is_empty
    )
    if not fallback:
        return scfg
    log.warning('suite has no server data; running fedsim with so_mode=off')
    return scfg._replace(so_mode=SO_MODE.OFF)


def validate_server_config(scfg, suite):  # type: (ServerConfig, TaskSuite) -> None
    """Raise a ConfigurationError if scfg is inconsistent with itself or with the suite."""
    if scfg.beta < 0:
        raise ConfigurationError('server step size must be >= 0, got {}'.format(scfg.beta))
    if not 1 <= scfg.m <= suite.n_clients:
        raise ConfigurationError('clients per round must lie in [1, {}], got {}'.format(
            suite.n_clients, scfg.m))
    if scfg.so_mode == SO_MODE.SERVER_DATA and not scfg.delta_fd > 0:
        raise ConfigurationError('delta_fd must be positive, got {}'.format(scfg.delta_fd))
    if scfg.server_batch_size < 1:
        raise ConfigurationError('server batch size must be >= 1')
    if not 0 <= scfg.pfedme_mix <= 1:
        raise ConfigurationError('pfedme_mix must lie in [0, 1], got {}'.format(scfg.pfedme_mix))
    if scfg.workers < 1:
        raise ConfigurationError('workers must be >= 1, got {}'.format(scfg.workers))
    if scfg.max_correction is not None and not scfg.max_correction > 0:
        raise ConfigurationError('max_correction must be positive, got {}'.format(
            scfg.max_correction))
    if needs_server_data(scfg) and suite.server.is_empty:
        raise ConfigurationError(
            '{} reads server data but the suite has none; reserve partitions or use so_mode=off'
            .format(scfg.strategy.value))


def first_order_estimate(theta, phi):  # type: (ParamVector, ParamVector) -> ParamVector
    """Weight-difference estimate v = theta - phi of the first-order meta-gradient."""
    check_same_length(theta, phi)
    return theta - phi


def first_order_from_server_data(
    spec,  # type: ModelSpec
    phi,  # type: ParamVector
    server_query,  # type: Batch
    counter=None,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    """First-order term from a server query batch: grad f(phi; D_s^q)."""
    if server_query.size == 0:
        raise ConfigurationError('first-order estimate from server data needs server data')
    counter = counter if counter is not None else GradientCounter()
    return counter.gradient(spec, phi, server_query)


def second_order_estimate(
    spec,  # type: ModelSpec
    phi,  # type: ParamVector
    v,  # type: ParamVector
    server_batch,  # type: Batch
    delta_fd,  # type: float
    counter=None,  # type: Optional[GradientCounter]
):  # type: (...) -> ParamVector
    """Hessian-free estimate d = H_s(phi) v over the server batch (two gradient evaluations)."""
    if server_batch.size == 0:
        raise ConfigurationError('second-order estimate needs server data; use so_mode=off instead')
    counter = counter if counter is not None else GradientCounter()
    return hvp_hessian_free(counter.bind(spec, server_batch), phi, v, delta_fd)


def compute_meta_gradient(
    spec,  # type: ModelSpec
    theta,  # type: ParamVector
    phi,  # type: ParamVector
    scfg,  # type: ServerConfig
    server_batch,  # type: Optional[Batch]
    server_query=None,  # type: Optional[Batch]
):  # type: (...) -> MetaGradientParts
    """Assemble v_i - delta_weight * d_i from the global model, personalized model and server data.

    Nothing about how phi was obtained is needed.
    """
    counter = GradientCounter()
    if scfg.fo_mode == FO_MODE.SERVER_DATA:
        if server_query is None:
            raise ConfigurationError('fo_mode=server_data needs a server query batch')
        v = first_order_from_server_data(spec, phi, server_query, counter)
    else:
        v = first_order_estimate(theta, phi)

    if scfg.so_mode == SO_MODE.OFF:
        return MetaGradientParts(v, None, v, counter.evals)
    if server_batch is None:
        raise ConfigurationError('so_mode=server_data needs a server batch')
    d = second_order_estimate(spec, phi, v, server_batch, scfg.delta_fd, counter)
    correction = limit_correction(scfg.delta_weight * d, v, scfg.max_correction)
    return MetaGradientParts(v, d, v - correction, counter.evals)


def limit_correction(correction, v, max_correction):  # type: (ParamVector, ParamVector, Optional[float]) -> ParamVector  # noqa: E501
    """Rescale the second-order correction to at most max_correction * |v|.

    v - delta_weight * d truncates (I + delta_weight * H)^-1 v after its first term, which only
    approximates the inverse while |delta_weight * H| < 1; past a ratio of 1/2 the dropped
    terms outweigh the correction itself.
    """
    if max_correction is None:
        return correction
    size, limit = norm(correction), max_correction * norm(v)
    if size <= limit:
        return correction
    log.debug('second-order correction %.4g exceeds %.4g, rescaled', size, limit)
    return correction * (limit / size)


def schedule_step(beta0, round_index, total_rounds, schedule):  # type: (float, int, int, SCHEDULE) -> float  # noqa: E501
    """Server step size for a round: constant, or decayed linearly to 0 at total_rounds."""
    if schedule == SCHEDULE.CONSTANT:
        return beta0
    return max(0.0, beta0 * (1.0 - round_index / max(total_rounds, 1)))


def aggregate(contributions):  # type: (Sequence[Tuple[int, ParamVector]]) -> ParamVector
    """Mean of (client_id, params) contributions, reduced in client-id order."""
    ordered = sorted(contributions, key=lambda item: item[0])
    return mean([params for _, params in ordered])


class FederatedServer:
    """Base class for a federated strategy running over one task suite."""

    def __init__(
        self,
        suite,  # type: TaskSuite
        scfg,  # type: ServerConfig
        lcfg,  # type: LocalConfig
        rng_seed,  # type: int
        total_rounds=1,  # type: int
    ):  # type: (...) -> None
        self.suite = suite
        self.spec = suite.model_spec
        self.scfg, self.lcfg = resolve_strategy(scfg, lcfg)
        self.rng_seed = rng_seed
        self.total_rounds = total_rounds
        validate_server_config(self.scfg, suite)

    @property
    def strategy(self):  # type: () -> STRATEGY
        return self.scfg.strategy

    def next_round(self, theta_prev, round_index):  # type: (ParamVector, int) -> RoundOutcome
        """Run one communication round and return the new global model."""
        raise NotImplementedError

    def beta_for(self, round_index):  # type: (int) -> float
        return schedule_step(self.scfg.beta, round_index, self.total_rounds, self.scfg.schedule)

    def sample_clients(self, round_index):  # type: (int) -> List[ClientPartition]
        """Uniformly sample m clients without replacement, keyed on (seed, round)."""
        rng = seeding.derive_rng(self.rng_seed, seeding.SAMPLE_CLIENTS, round_index)
        chosen = rng.choice(self.suite.n_clients, size=self.scfg.m, replace=False)
        return sorted((self.suite.clients[index] for index in chosen),
                      key=lambda client: client.client_id)

    def client_seed(self, round_index, client_id):  # type: (int, int) -> int
        return seeding.derive_seed(self.rng_seed, seeding.CLIENT_UPDATE, round_index, client_id)

    def draw_server_batch(self, round_index, purpose):  # type: (int, int) -> Batch
        """Draw a server mini-batch without replacement (all server data if it is smaller)."""
        pooled = self.suite.server.pooled
        rng = seeding.derive_rng(self.rng_seed, purpose, round_index)
        size = min(self.scfg.server_batch_size, pooled.size)
        return pooled.take(rng.permutation(pooled.size)[:size])

    def run_clients(self, clients, work):  # type: (Sequence[ClientPartition], Callable[[ClientPartition], T]) -> List[T]  # noqa: E501
        """Apply work to each client, concurrently when workers > 1; results keep client order."""
        if self.scfg.workers == 1 or len(clients) == 1:
            return [work(client) for client in clients]
        with ThreadPoolExecutor(max_workers=self.scfg.workers) as executor:
            return list(executor.map(work, clients))

    def outcome(self, theta, results, beta_used):  # type: (ParamVector, Sequence[LocalResult], float) -> RoundOutcome  # noqa: E501
        return RoundOutcome(
            theta=theta,
            client_ids=tuple(result.client_id for result in results),
            client_grad_evals=sum(result.client_grad_evals for result in results),
            server_grad_evals=sum(result.server_grad_evals for result in results),
            beta_used=beta_used,
        )


def apply_meta_step(phi, beta, meta_grad):  # type: (ParamVector, float, ParamVector) -> ParamVector
    """phi - beta * meta_grad, returning phi unchanged when beta is 0."""
    return axpy(-beta, meta_grad, phi)
