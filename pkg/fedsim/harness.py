"""End-to-end simulation runs, personalized evaluation, experiment grids and the command line.

Run `python -m fedsim.harness --help` for the subcommands.
"""
import argparse
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from logging import getLogger
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from fedsim import analysis
from fedsim.client import LOSS_MODE, client_update_basic
from fedsim.config import ExperimentConfig, build_suite, load_config, validate_experiment
from fedsim.errors import ConfigurationError, NumericError
from fedsim.model import ModelSpec, init_params, predict
from fedsim.records import RoundRecord, read_records_csv, write_json, write_records_csv
from fedsim.rounds import make_server, to_record
from fedsim.server import STRATEGY, fit_to_suite
from fedsim.tasks import SUITE_KIND, ClientPartition, TaskSuite, export_suite, import_suite
from fedsim.utilities import seeding
from fedsim.utilities.shading import render_side_by_side
from fedsim.utilities.vectors import ParamVector

log = getLogger(__name__)

SERVER_CLIENT_ID = -1  # stands in for a client id when training on server data


class GRID_AXIS(Enum):
    """Which ExperimentConfig setting a grid sweeps."""
    SERVER_FRACTION = 'server_fraction'  # type: str
    LOCAL_EPOCHS = 'local_epochs'  # type: str
    STRATEGY = 'strategy'  # type: str


NUMERIC_AXES = frozenset([GRID_AXIS.SERVER_FRACTION, GRID_AXIS.LOCAL_EPOCHS])


GridRun = NamedTuple(
    'GridRun',
    [
        ('value', Any),
        ('seed', int),
        ('records', List[RoundRecord]),
    ],
)


GridResult = NamedTuple(
    'GridResult',
    [
        ('axis', GRID_AXIS),
        ('values', List[Any]),
        ('runs', List[GridRun]),
        ('summary', Dict[str, Any]),
    ],
)


def client_metric(spec, params, batch, is_classification):  # type: (ModelSpec, ParamVector, Any, bool) -> float  # noqa: E501
    """Accuracy (classification) or mean squared error (regression) of params on a batch."""
    predictions = predict(spec, params, batch.inputs)
    if is_classification:
        hits = np.argmax(predictions, axis=1) == np.argmax(batch.targets, axis=1)
        return float(np.mean(hits))
    return float(np.mean((predictions - batch.targets) ** 2))


def evaluate_personalized(
    suite,  # type: TaskSuite
    theta,  # type: ParamVector
    cfg,  # type: ExperimentConfig
    seed,  # type: int
    round_index,  # type: int
):  # type: (...) -> float
    """Fine-tune theta on freshly sampled clients' train data and average their eval metric.

    Fine-tuning uses the basic loss and the client step size; the fine-tuned models
    are discarded, so theta is never modified.
    """
    eval_m = min(cfg.eval_m, suite.n_clients)
    if eval_m < cfg.eval_m:
        log.warning('eval_m=%d exceeds the %d clients, evaluating all of them',
                    cfg.eval_m, suite.n_clients)
    finetune_epochs = cfg.local.epochs if cfg.finetune_epochs is None else cfg.finetune_epochs
    spec = suite.model_spec
    finetune_cfg = cfg.local._replace(loss_mode=LOSS_MODE.BASIC, epochs=finetune_epochs)

    rng = seeding.derive_rng(seed, seeding.EVALUATION, round_index)
    chosen = sorted(int(index) for index in rng.choice(suite.n_clients, size=eval_m, replace=False))

    metrics = []  # type: List[float]
    for index in chosen:
        client = suite.clients[index]  # type: ClientPartition
        params = theta
        if finetune_epochs > 0:
            finetune_seed = seeding.derive_seed(
                seed, seeding.FINETUNE, round_index, client.client_id,
            )
            params = client_update_basic(client, theta, finetune_cfg, spec, finetune_seed)
        metrics.append(client_metric(spec, params, client.eval, suite.is_classification))
    return float(np.mean(metrics))


def warm_start(suite, theta, cfg, seed):  # type: (TaskSuite, ParamVector, ExperimentConfig, int) -> ParamVector  # noqa: E501
    """Train the initial model on the pooled server data with the basic loss.

    Every strategy starts from the warm-started model. Without server data theta is returned
    unchanged.
    """
    if cfg.warm_start_epochs == 0 or suite.server.is_empty:
        return theta
    pooled = suite.server.pooled
    server_partition = ClientPartition(SERVER_CLIENT_ID, pooled, pooled, None, None, {})
    warm_cfg = cfg.local._replace(loss_mode=LOSS_MODE.BASIC, epochs=cfg.warm_start_epochs)
    log.info('warm start: %d epochs on %d server samples', cfg.warm_start_epochs, pooled.size)
    return client_update_basic(server_partition, theta, warm_cfg, suite.model_spec,
                               seeding.derive_seed(seed, seeding.WARM_START))


class Simulation:
    """One seeded run of an experiment: the suite, the server strategy and the global model."""

    def __init__(self, cfg, seed, suite=None):  # type: (ExperimentConfig, int, Optional[TaskSuite]) -> None  # noqa: E501
        self.cfg = cfg
        self.seed = seed
        self.suite = suite if suite is not None else build_suite(cfg.suite, seed)
        validate_experiment(cfg, self.suite)
        scfg = fit_to_suite(cfg.server, self.suite)
        self.server = make_server(self.suite, scfg, cfg.local, seed, cfg.total_rounds)
        theta = init_params(self.suite.model_spec, seeding.derive_seed(seed, seeding.INIT))
        self.theta = warm_start(self.suite, theta, cfg, seed)
        self.round_index = 0
        self.client_grad_evals = 0
        self.server_grad_evals = 0

    @property
    def finished(self):  # type: () -> bool
        return self.round_index >= self.cfg.total_rounds

    def should_evaluate(self, round_index):  # type: (int) -> bool
        if self.cfg.eval_every == 0:
            return False
        last_round = round_index == self.cfg.total_rounds - 1
        return round_index % self.cfg.eval_every == 0 or last_round

    def next_round(self):  # type: () -> RoundRecord
        """Run one round, evaluate it if due, and return its record with cumulative counters."""
        round_index = self.round_index
        try:
            outcome = self.server.next_round(self.theta, round_index)
            self.theta = outcome.theta
            metric = None  # type: Optional[float]
            if self.should_evaluate(round_index):
                metric = evaluate_personalized(
                    self.suite, self.theta, self.cfg, self.seed, round_index,
                )
        except NumericError as error:
            raise error.with_context(round_index=round_index) from error

        self.client_grad_evals += outcome.client_grad_evals
        self.server_grad_evals += outcome.server_grad_evals
        record = to_record(outcome, self.server, round_index)._replace(
            personalized_metric=metric,
            client_grad_evals=self.client_grad_evals,
            server_grad_evals=self.server_grad_evals,
        )
        self.round_index += 1

        log.debug('round %d: beta=%r client evals=%d server evals=%d', round_index,
                  record.beta_used, outcome.client_grad_evals, outcome.server_grad_evals)
        if metric is not None:
            log.info('%s seed %d round %d: metric=%.6f', record.strategy.value, self.seed,
                     round_index, metric)
        return record

    def run(self):  # type: () -> List[RoundRecord]
        records = []  # type: List[RoundRecord]
        while not self.finished:
            records.append(self.next_round())
        return records


def run_simulation(cfg, seed=None):  # type: (ExperimentConfig, Optional[int]) -> List[RoundRecord]
    """Run one seed of an experiment (the first configured seed by default).

    Every round yields a record; personalized_metric is None on rounds that were not evaluated.
    """
    seed = cfg.seeds[0] if seed is None else seed
    log.info('starting %s run, seed %d, %d rounds', cfg.server.strategy.value, seed,
             cfg.total_rounds)
    records = Simulation(cfg, seed).run()
    log.info('finished %s run, seed %d', cfg.server.strategy.value, seed)
    return records


def final_metric(records):  # type: (Sequence[RoundRecord]) -> Optional[float]
    """The metric of the last evaluated round."""
    for record in reversed(records):
        if record.personalized_metric is not None:
            return record.personalized_metric
    return None


def rounds_to_target(records, target):  # type: (Sequence[RoundRecord], float) -> Optional[int]
    """First round whose metric reaches target (>= for accuracy, <= for MSE), or None."""
    for record in records:
        metric = record.personalized_metric
        if metric is None:
            continue
        reached = metric >= target if record.higher_is_better else metric <= target
        if reached:
            return record.round
    return None


def apply_axis(base, axis, value):  # type: (ExperimentConfig, GRID_AXIS, Any) -> ExperimentConfig
    """base with the swept setting replaced by value."""
    if axis == GRID_AXIS.SERVER_FRACTION:
        return base._replace(suite=base.suite._replace(server_fraction=float(value)))
    if axis == GRID_AXIS.LOCAL_EPOCHS:
        return base._replace(local=base.local._replace(epochs=int(value)))
    strategy = value if isinstance(value, STRATEGY) else STRATEGY(value)
    return base._replace(server=base.server._replace(strategy=strategy))


def run_grid(base, axis, values, workers=1):  # type: (ExperimentConfig, GRID_AXIS, Sequence[Any], int) -> GridResult  # noqa: E501
    """One run per (value, seed) cell, summarized by the mean and stddev of the final metric."""
    if not values:
        raise ConfigurationError('a grid needs at least one value')
    if base.eval_every == 0:
        raise ConfigurationError('a grid summarizes evaluated metrics; eval_every must be > 0')
    cells = [(value, seed) for value in values for seed in base.seeds]

    def run_cell(cell):  # type: (Tuple[Any, int]) -> GridRun
        value, seed = cell
        log.info('grid cell %s=%s seed %d', axis.value, _plain(value), seed)
        return GridRun(value, seed, run_simulation(apply_axis(base, axis, value), seed))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            runs = list(executor.map(run_cell, cells))
    else:
        runs = [run_cell(cell) for cell in cells]
    return GridResult(axis, list(values), runs, summarize_grid(axis, values, runs))


def summarize_grid(axis, values, runs):  # type: (GRID_AXIS, Sequence[Any], Sequence[GridRun]) -> Dict[str, Any]  # noqa: E501
    summaries = []  # type: List[Dict[str, Any]]
    for value in values:
        finals = [final_metric(run.records) for run in runs if run.value == value]
        scores = [score for score in finals if score is not None]
        summaries.append({
            'value': _plain(value),
            'seeds': [run.seed for run in runs if run.value == value],
            'final_metrics': scores,
            'mean': float(np.mean(scores)) if scores else None,
            'stddev': float(np.std(scores)) if scores else None,
        })

    trend = None  # type: Optional[float]
    if axis in NUMERIC_AXES:
        points = [
            (float(item['value']), item['mean']) for item in summaries
            if item['mean'] is not None
        ]
        if len(points) >= 2:
            positions, means = zip(*points)
            if np.ptp(positions) > 0 and np.ptp(means) > 0:
                rho, _ = stats.spearmanr(positions, means)
                trend = float(rho)
    return {'axis': axis.value, 'values': summaries, 'trend': trend}


def run_csv_name(strategy, seed):  # type: (STRATEGY, int) -> str
    return 'run_{}_seed{}.csv'.format(strategy.value, seed)


def grid_csv_name(axis, value, seed):  # type: (GRID_AXIS, Any, int) -> str
    return 'grid_{}_{}_seed{}.csv'.format(axis.value, _plain(value), seed)


def write_grid(result, out_dir):  # type: (GridResult, str) -> str
    """Write every cell's CSV plus the grid summary JSON; returns the summary path."""
    os.makedirs(out_dir, exist_ok=True)
    for run in result.runs:
        write_records_csv(run.records, os.path.join(out_dir, grid_csv_name(result.axis, run.value,
                                                                            run.seed)))
    summary_path = os.path.join(out_dir, 'grid_{}_summary.json'.format(result.axis.value))
    write_json(result.summary, summary_path)
    return summary_path


def _plain(value):  # type: (Any) -> Any
    return value.value if isinstance(value, Enum) else value


def analyze(tasks_paths, runs_paths=(), pairwise=False):  # type: (Sequence[str], Sequence[str], bool) -> Dict[str, Any]  # noqa: E501
    """Similarity report per exported glyph suite, joined with the final metric of its run CSV."""
    if runs_paths and len(runs_paths) != len(tasks_paths):
        raise ConfigurationError('give one run CSV per task suite, got {} and {}'.format(
            len(runs_paths), len(tasks_paths)))
    reports = []  # type: List[analysis.SimilarityReport]
    for index, path in enumerate(tasks_paths):
        suite = import_suite(path)
        report = analysis.server_client_similarity(
            suite.server, suite.clients, suite.server_fraction, pairwise,
        )
        if runs_paths:
            records = read_records_csv(runs_paths[index], suite.is_classification)
            report = report._replace(accuracy_mean=final_metric(records))
        reports.append(report)

    correlation = None  # type: Optional[float]
    if sum(report.accuracy_mean is not None for report in reports) >= \
            analysis.MIN_CORRELATION_POINTS:
        correlation = analysis.correlate_variance_accuracy(reports)
    return {
        'reports': [analysis.report_to_dict(report) for report in reports],
        'variance_accuracy_correlation': correlation,
        'variance_trend': analysis.variance_trend(reports),
    }


def show_suite(path, n_clients=4):  # type: (str, int) -> str
    """Server mean image next to the first clients' mean images, as terminal blocks."""
    suite = import_suite(path)
    images = [analysis.mean_image(suite.server.pooled.inputs)]
    images.extend(analysis.mean_image(client.train.inputs) for client in suite.clients[:n_clients])
    return render_side_by_side(images)


def build_parser():  # type: () -> argparse.ArgumentParser
    parser = argparse.ArgumentParser(prog='python -m fedsim.harness')
    parser.add_argument('--verbose', '-v', action='store_true')
    subparsers = parser.add_subparsers(dest='command')
    subparsers.required = True

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument('--config', '-c', help='JSON experiment config')
    experiment.add_argument('--seed', '-s', type=int, action='append',
                            help='repeat for several seeds')
    experiment.add_argument('--strategy', choices=[strategy.value for strategy in STRATEGY])
    experiment.add_argument('--suite', choices=[kind.value for kind in SUITE_KIND])
    experiment.add_argument('--server-fraction', type=float)
    experiment.add_argument('--epochs', '-e', type=int)
    experiment.add_argument('--rounds', '-r', type=int)
    experiment.add_argument('--clients-per-round', '-m', type=int)
    experiment.add_argument('--alpha', type=float)
    experiment.add_argument('--lam', type=float)
    experiment.add_argument('--beta', type=float)
    experiment.add_argument('--eval-every', type=int)
    experiment.add_argument('--eval-m', type=int)
    experiment.add_argument('--finetune-epochs', type=int)
    experiment.add_argument('--warm-start-epochs', type=int)
    experiment.add_argument('--workers', '-w', type=int)
    experiment.add_argument('--out', '-o')

    subparsers.add_parser('run', parents=[experiment], help='run one experiment per seed')

    grid = subparsers.add_parser('grid', parents=[experiment], help='sweep one setting')
    grid.add_argument('--axis', '-a', required=True, choices=[axis.value for axis in GRID_AXIS])
    grid.add_argument('--values', nargs='+', required=True)
    grid.add_argument('--grid-workers', type=int, default=1)

    subparsers.add_parser('export-tasks', parents=[experiment], help='write the task suite to .npz')

    report = subparsers.add_parser('analyze', help='server/client SSIM report')
    report.add_argument('--tasks', nargs='+', required=True, help='exported glyph suites')
    report.add_argument('--runs', nargs='*', default=[], help='one run CSV per suite')
    report.add_argument('--pairwise', action='store_true')
    report.add_argument('--show', action='store_true', help='preview mean images')
    report.add_argument('--out', '-o', default='results')
    return parser


def config_from_args(args):  # type: (argparse.Namespace) -> ExperimentConfig
    """File values (or defaults) overridden by whichever flags were given."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    suite, local, server = cfg.suite, cfg.local, cfg.server
    if args.suite is not None:
        suite = suite._replace(kind=SUITE_KIND(args.suite))
    if args.server_fraction is not None:
        suite = suite._replace(server_fraction=args.server_fraction)
    if args.epochs is not None:
        local = local._replace(epochs=args.epochs)
    if args.alpha is not None:
        local = local._replace(alpha=args.alpha)
    if args.lam is not None:
        local = local._replace(lam=args.lam)
    if args.strategy is not None:
        server = server._replace(strategy=STRATEGY(args.strategy))
    if args.clients_per_round is not None:
        server = server._replace(m=args.clients_per_round)
    if args.beta is not None:
        server = server._replace(beta=args.beta)
    if args.workers is not None:
        server = server._replace(workers=args.workers)
    cfg = cfg._replace(suite=suite, local=local, server=server)

    overrides = {
        'total_rounds': args.rounds,
        'eval_every': args.eval_every,
        'eval_m': args.eval_m,
        'finetune_epochs': args.finetune_epochs,
        'warm_start_epochs': args.warm_start_epochs,
        'seeds': tuple(args.seed) if args.seed else None,
        'output_path': args.out,
    }
    return cfg._replace(**{key: value for key, value in overrides.items() if value is not None})


def parse_axis_values(axis, values):  # type: (GRID_AXIS, Sequence[str]) -> List[Any]
    if axis == GRID_AXIS.SERVER_FRACTION:
        return [float(value) for value in values]
    if axis == GRID_AXIS.LOCAL_EPOCHS:
        return [int(value) for value in values]
    return [STRATEGY(value) for value in values]


def main(argv=None):  # type: (Optional[Sequence[str]]) -> int
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )

    if args.command == 'analyze':
        os.makedirs(args.out, exist_ok=True)
        if args.show:
            for path in args.tasks:
                print(path)
                print(show_suite(path))
        write_json(analyze(args.tasks, args.runs, args.pairwise),
                   os.path.join(args.out, 'similarity_reports.json'))
        return 0

    cfg = config_from_args(args)
    os.makedirs(cfg.output_path, exist_ok=True)

    if args.command == 'export-tasks':
        for seed in cfg.seeds:
            path = os.path.join(cfg.output_path, 'tasks_{}_seed{}.npz'.format(
                cfg.suite.kind.value, seed))
            export_suite(build_suite(cfg.suite, seed), path)
            log.info('wrote %s', path)
    elif args.command == 'grid':
        axis = GRID_AXIS(args.axis)
        result = run_grid(cfg, axis, parse_axis_values(axis, args.values), args.grid_workers)
        log.info('wrote %s', write_grid(result, cfg.output_path))
    else:
        for seed in cfg.seeds:
            records = run_simulation(cfg, seed)
            path = os.path.join(cfg.output_path, run_csv_name(cfg.server.strategy, seed))
            write_records_csv(records, path)
            log.info('wrote %s (final metric %r)', path, final_metric(records))
    return 0


if __name__ == '__main__':
    raise SystemExit(main())
