"""Derive independent random streams from integer keys.

Streams are keyed on (seed, round, client id, purpose) so results never depend on
the order in which work is scheduled.
"""
import numpy as np

# purpose tags
SAMPLE_CLIENTS = 1
SERVER_BATCH = 2
SERVER_QUERY = 3
CLIENT_UPDATE = 4
EVALUATION = 5
FINETUNE = 6
EPOCH = 7
INIT = 8
TASKS = 9
RESERVE = 10
SPLIT = 11
WARM_START = 12


def derive_seed(*keys):  # type: (*int) -> int
    """Return a 64-bit integer seed derived from the given non-negative integer keys."""
    sequence = np.random.SeedSequence([int(key) for key in keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def derive_rng(*keys):  # type: (*int) -> np.random.Generator
    """Return a numpy Generator seeded from the given integer keys."""
    return np.random.default_rng(np.random.SeedSequence([int(key) for key in keys]))
