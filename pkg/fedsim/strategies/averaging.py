"""Model-averaging baselines: FedAvg, FedProx and Fed-Reptile."""
from fedsim import server
from fedsim.client import client_update, client_update_basic
from fedsim.server import STRATEGY, LocalResult, RoundOutcome
from fedsim.tasks import ClientPartition
from fedsim.utilities.counters import GradientCounter
from fedsim.utilities.vectors import ParamVector, interpolate


class AveragingServer(server.FederatedServer):
    """Average locally trained models.

    FedAvg trains with the basic loss, FedProx with the proximal loss; Fed-Reptile moves
    theta a fraction beta of the way towards the average.
    """

    def next_round(self, theta_prev, round_index):  # type: (ParamVector, int) -> RoundOutcome
        clients = self.sample_clients(round_index)
        update = client_update if self.strategy == STRATEGY.FEDPROX else client_update_basic

        def work(client):  # type: (ClientPartition) -> LocalResult
            counter = GradientCounter()
            seed = self.client_seed(round_index, client.client_id)
            phi = update(client, theta_prev, self.lcfg, self.spec, seed, counter)
            return LocalResult(client.client_id, phi, counter.evals, 0)

        results = self.run_clients(clients, work)
        averaged = server.aggregate([(result.client_id, result.params) for result in results])
        if self.strategy == STRATEGY.FED_REPTILE:
            beta = self.beta_for(round_index)
            return self.outcome(interpolate(beta, theta_prev, averaged), results, beta)
        return self.outcome(averaged, results, 0.0)
