"""Count exact gradient evaluations (stands in for wall-clock compute comparisons)."""
from typing import Callable

import numpy as np

from fedsim.model import Batch, ModelSpec, gradient

GradientFn = Callable[[np.ndarray], np.ndarray]


class GradientCounter:
    """Wrap model.gradient and count how many times it is called.

    One counter is created per unit of work (a client update, a server estimate),
    so counters are never shared between threads.
    """

    def __init__(self):  # type: () -> None
        self.evals = 0

    def gradient(self, spec, params, batch):  # type: (ModelSpec, np.ndarray, Batch) -> np.ndarray
        """Return the exact gradient and record one evaluation."""
        self.evals += 1
        return gradient(spec, params, batch)

    def bind(self, spec, batch):  # type: (ModelSpec, Batch) -> GradientFn
        """Return a counted gradient function of the parameters only."""
        def _gradient(params):  # type: (np.ndarray) -> np.ndarray
            return self.gradient(spec, params, batch)
        return _gradient

    def __repr__(self):  # type: () -> str
        return 'GradientCounter(evals={})'.format(self.evals)
