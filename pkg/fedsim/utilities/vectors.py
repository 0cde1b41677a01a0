"""Vector algebra over flat parameter vectors.

Every model quantity (global model, personalized model, meta-gradients) is a flat
float64 vector of the model's param_count.
"""
from typing import Sequence

import numpy as np

from fedsim.errors import ConfigurationError, NumericError

ParamVector = np.ndarray


def as_param_vector(values):  # type: (Sequence[float]) -> ParamVector
    """Coerce values to a fresh 1-D float64 vector."""
    vector = np.array(values, dtype=np.float64).reshape(-1)
    return vector


def check_same_length(*vectors):  # type: (*ParamVector) -> None
    """Raise a ConfigurationError unless every vector has the same length."""
    lengths = {len(vector) for vector in vectors}
    if len(lengths) > 1:
        raise ConfigurationError('parameter vectors differ in length: {}'.format(sorted(lengths)))


def check_finite(vector, what='vector', **context):  # type: (ParamVector, str, **object) -> None
    """Raise a NumericError if any entry is NaN or infinite."""
    if not np.all(np.isfinite(vector)):
        raise NumericError('non-finite values in {}'.format(what), **context)


def add(x, y):  # type: (ParamVector, ParamVector) -> ParamVector
    check_same_length(x, y)
    return x + y


def sub(x, y):  # type: (ParamVector, ParamVector) -> ParamVector
    check_same_length(x, y)
    return x - y


def scale(a, x):  # type: (float, ParamVector) -> ParamVector
    return a * x


def axpy(a, x, y):  # type: (float, ParamVector, ParamVector) -> ParamVector
    """Return a*x + y. With a == 0 the result is y itself, bit for bit."""
    check_same_length(x, y)
    if a == 0:
        return y.copy()
    return a * x + y


def interpolate(beta, x, y):  # type: (float, ParamVector, ParamVector) -> ParamVector
    """Return (1 - beta)*x + beta*y, exact at both endpoints."""
    check_same_length(x, y)
    if beta == 0:
        return x.copy()
    if beta == 1:
        return y.copy()
    return (1.0 - beta) * x + beta * y


def norm(x):  # type: (ParamVector) -> float
    """Euclidean norm."""
    return float(np.linalg.norm(x))


def dot(x, y):  # type: (ParamVector, ParamVector) -> float
    check_same_length(x, y)
    return float(np.dot(x, y))


def cosine_similarity(x, y):  # type: (ParamVector, ParamVector) -> float
    """Cosine of the angle between x and y (0 when either is the zero vector)."""
    denominator = norm(x) * norm(y)
    if denominator == 0:
        return 0.0
    return dot(x, y) / denominator


def mean(vectors):  # type: (Sequence[ParamVector]) -> ParamVector
    """Elementwise mean of a non-empty collection.

    Computed as base + sum(x_i - base) / k with base the first vector, so the mean
    of identical vectors is exactly that vector.
    """
    if not len(vectors):
        raise ConfigurationError('cannot take the mean of an empty collection')
    check_same_length(*vectors)
    stacked = np.stack(vectors)
    base = stacked[0]
    return base + np.sum(stacked - base, axis=0) / len(vectors)
