"""MAML-style baselines whose meta-gradients are computed on the clients."""
from fedsim import server
from fedsim.client import fedmeta_update, perfedavg_fo_update
from fedsim.server import STRATEGY, LocalResult, RoundOutcome
from fedsim.tasks import ClientPartition
from fedsim.utilities.counters import GradientCounter
from fedsim.utilities.vectors import ParamVector


class LocalMetaServer(server.FederatedServer):
    """Average the models each client meta-updated locally (Per-FedAvg FO or FedMeta)."""

    def next_round(self, theta_prev, round_index):  # type: (ParamVector, int) -> RoundOutcome
        clients = self.sample_clients(round_index)
        update = fedmeta_update if self.strategy == STRATEGY.FEDMETA else perfedavg_fo_update

        def work(client):  # type: (ClientPartition) -> LocalResult
            counter = GradientCounter()
            seed = self.client_seed(round_index, client.client_id)
            params = update(client, theta_prev, self.lcfg, self.spec, seed, counter)
            return LocalResult(client.client_id, params, counter.evals, 0)

        results = self.run_clients(clients, work)
        averaged = server.aggregate([(result.client_id, result.params) for result in results])
        return self.outcome(averaged, results, float(self.lcfg.beta_local or 0.0))
