"""FedSIM: server-side meta-gradients from personalized models and reserved server data.

Also covers the three ablations (var1: basic local loss, var2: first-order term from server
data, var3: no second-order term) and pfedme_mode, which skips the meta-gradient and mixes
the averaged personalized models into the global model.
"""
from logging import getLogger
from typing import Optional

from fedsim import server
from fedsim.client import LOSS_MODE, client_update, client_update_basic
from fedsim.model import Batch
from fedsim.server import FO_MODE, SO_MODE, STRATEGY, LocalResult, RoundOutcome
from fedsim.tasks import ClientPartition
from fedsim.utilities import seeding
from fedsim.utilities.counters import GradientCounter
from fedsim.utilities.vectors import ParamVector, interpolate

log = getLogger(__name__)


class MetaGradientServer(server.FederatedServer):
    """Local proximal solves, a meta-step on each phi_i, then the average of the stepped models."""

    def next_round(self, theta_prev, round_index):  # type: (ParamVector, int) -> RoundOutcome
        """Sample clients, personalize, apply phi_i - beta * meta_grad_i and average."""
        pfedme = self.strategy == STRATEGY.PFEDME_MODE
        beta = self.beta_for(round_index)
        clients = self.sample_clients(round_index)

        # one server batch per round, shared by every sampled client
        server_batch = None  # type: Optional[Batch]
        server_query = None  # type: Optional[Batch]
        if not pfedme and self.scfg.so_mode == SO_MODE.SERVER_DATA:
            server_batch = self.draw_server_batch(round_index, seeding.SERVER_BATCH)
        if not pfedme and self.scfg.fo_mode == FO_MODE.SERVER_DATA:
            server_query = self.draw_server_batch(round_index, seeding.SERVER_QUERY)

        def work(client):  # type: (ClientPartition) -> LocalResult
            counter = GradientCounter()
            phi = self._personalize(client, theta_prev, round_index, counter)
            if pfedme:
                return LocalResult(client.client_id, phi, counter.evals, 0)
            parts = server.compute_meta_gradient(
                self.spec, theta_prev, phi, self.scfg, server_batch, server_query,
            )
            updated = server.apply_meta_step(phi, beta, parts.meta_grad)
            return LocalResult(client.client_id, updated, counter.evals, parts.grad_evals_server)

        results = self.run_clients(clients, work)
        averaged = server.aggregate([(result.client_id, result.params) for result in results])
        if pfedme:
            theta = interpolate(self.scfg.pfedme_mix, theta_prev, averaged)
            return self.outcome(theta, results, self.scfg.pfedme_mix)
        log.debug('round %d: beta=%.4g, server batch=%s', round_index, beta,
                  None if server_batch is None else server_batch.size)
        return self.outcome(averaged, results, beta)

    def _personalize(
        self,
        client,  # type: ClientPartition
        theta,  # type: ParamVector
        round_index,  # type: int
        counter,  # type: GradientCounter
    ):  # type: (...) -> ParamVector
        seed = self.client_seed(round_index, client.client_id)
        if self.lcfg.loss_mode == LOSS_MODE.BASIC:
            return client_update_basic(client, theta, self.lcfg, self.spec, seed, counter)
        return client_update(client, theta, self.lcfg, self.spec, seed, counter)
