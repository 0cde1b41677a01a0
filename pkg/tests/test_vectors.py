import numpy as np
import pytest

from fedsim.errors import ConfigurationError, NumericError
from fedsim.utilities import vectors


def test_mean_of_identical_vectors_is_exact():
    vector = np.array([0.1, 1 / 3, -2.7e-8])
    np.testing.assert_array_equal(vectors.mean([vector, vector.copy(), vector.copy()]), vector)


def test_mean_of_empty_collection():
    with pytest.raises(ConfigurationError):
        vectors.mean([])


def test_length_mismatch():
    with pytest.raises(ConfigurationError):
        vectors.add(np.zeros(2), np.zeros(3))
    with pytest.raises(ConfigurationError):
        vectors.mean([np.zeros(2), np.zeros(3)])


def test_axpy_with_zero_scale_returns_copy():
    y = np.array([1.0, 2.0])
    result = vectors.axpy(0.0, np.array([np.nan, 1.0]), y)
    np.testing.assert_array_equal(result, y)
    assert result is not y


@pytest.mark.parametrize('beta, expected', [
    (0.0, [1.0, 2.0]),
    (1.0, [3.0, -4.0]),
    (0.5, [2.0, -1.0]),
])
def test_interpolate(beta, expected):
    np.testing.assert_array_equal(
        vectors.interpolate(beta, np.array([1.0, 2.0]), np.array([3.0, -4.0])), expected,
    )


def test_norm_dot_cosine():
    assert vectors.norm(np.array([3.0, 4.0])) == 5.0
    assert vectors.dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
    assert vectors.cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
    assert vectors.cosine_similarity(np.zeros(2), np.array([1.0, 1.0])) == 0.0


def test_check_finite_carries_context():
    with pytest.raises(NumericError) as raised:
        vectors.check_finite(np.array([np.inf]), 'meta-gradient', client_id=4)
    assert raised.value.client_id == 4
    assert 'client_id=4' in str(raised.value)


def test_error_context_is_merged():
    error = NumericError('non-finite loss', layer_index=1).with_context(round_index=3)
    assert error.layer_index == 1
    assert error.round_index == 3
    assert str(error) == 'non-finite loss (layer_index=1, round_index=3)'
