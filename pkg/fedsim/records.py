"""Per-round metrics and their CSV / JSON persistence."""
import csv
import json
from typing import Any, Dict, Iterable, List, NamedTuple, Optional

from fedsim.errors import ConfigurationError
from fedsim.server import STRATEGY

CSV_HEADER = [
    'round',
    'strategy',
    'seed',
    'metric',
    'theta_norm',
    'client_grad_evals',
    'server_grad_evals',
    'beta_used',
]


RoundRecord = NamedTuple(
    'RoundRecord',
    [
        ('round', int),
        ('strategy', STRATEGY),
        ('seed', int),
        ('personalized_metric', Optional[float]),  # accuracy or MSE; None when not evaluated
        ('theta_norm', float),
        ('client_grad_evals', int),
        ('server_grad_evals', int),
        ('beta_used', float),
        ('higher_is_better', bool),  # True for accuracy, False for MSE
    ],
)


def format_float(value):  # type: (Optional[float]) -> str
    """Shortest exact text for a float, so reruns write identical bytes."""
    if value is None:
        return ''
    return repr(float(value))


def write_records_csv(records, path):  # type: (Iterable[RoundRecord], str) -> None
    """Write one run's records with the fixed CSV header."""
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow([
                record.round,
                record.strategy.value,
                record.seed,
                format_float(record.personalized_metric),
                format_float(record.theta_norm),
                record.client_grad_evals,
                record.server_grad_evals,
                format_float(record.beta_used),
            ])


def read_records_csv(path, higher_is_better):  # type: (str, bool) -> List[RoundRecord]
    """Read records written by write_records_csv."""
    with open(path, newline='', encoding='utf-8') as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ConfigurationError('{} does not have the run CSV header'.format(path))
        records = []  # type: List[RoundRecord]
        for row in reader:
            records.append(RoundRecord(
                round=int(row[0]),
                strategy=STRATEGY(row[1]),
                seed=int(row[2]),
                personalized_metric=float(row[3]) if row[3] else None,
                theta_norm=float(row[4]),
                client_grad_evals=int(row[5]),
                server_grad_evals=int(row[6]),
                beta_used=float(row[7]),
                higher_is_better=higher_is_better,
            ))
    return records


def write_json(document, path):  # type: (Dict[str, Any], str) -> None
    """Write a JSON document with sorted keys, so reruns write identical bytes."""
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, indent=2, sort_keys=True)
        handle.write('\n')
