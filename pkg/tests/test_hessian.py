import numpy as np
import pytest

from fedsim.errors import ConfigurationError, NumericError
from fedsim.model import Batch, ModelSpec, gradient
from fedsim.utilities.hessian import (
    explicit_hessian,
    hvp_hessian_free,
    implicit_meta_gradient_oracle,
)

from tests.conftest import quadratic_batch


def quadratic_gradient(a):
    return lambda phi: a * phi


def cubic_gradient(phi):
    # f(phi) = phi^3, Hessian 6 * phi, Hessian-Lipschitz constant 6
    return 3.0 * phi * phi


def quartic_gradient(phi):
    # f(phi) = phi^4
    return 4.0 * phi ** 3


def test_hvp_exact_on_quadratic():
    estimate = hvp_hessian_free(quadratic_gradient(2.0), np.array([0.7]), np.array([-2 / 3]), 0.3)
    assert estimate[0] == pytest.approx(-4 / 3, abs=1e-12)


def test_hvp_of_zero_direction():
    estimate = hvp_hessian_free(cubic_gradient, np.array([1.0, 2.0]), np.zeros(2), 0.1)
    np.testing.assert_array_equal(estimate, np.zeros(2))


@pytest.mark.parametrize('delta', [0.01, 0.1, 0.25])
@pytest.mark.parametrize('phi, v', [(-1.5, 1.0), (0.3, -0.5), (1.0, 1.0), (0.0, -1.0)])
def test_hvp_error_bound_on_quartic(delta, phi, v):
    # on [-2, 2] the Hessian 12 phi^2 is Lipschitz with constant 24 * 2
    rho = 48.0
    assert abs(phi) + delta * abs(v) <= 2.0
    estimate = hvp_hessian_free(quartic_gradient, np.array([phi]), np.array([v]), delta)
    assert abs(estimate[0] - 12.0 * phi ** 2 * v) <= rho * delta * v ** 2


def test_hvp_error_shrinks_with_delta():
    # the central difference overshoots 12 by 4 * delta^2
    errors = [
        abs(hvp_hessian_free(quartic_gradient, np.array([1.0]), np.array([1.0]), delta)[0] - 12.0)
        for delta in (0.1, 0.01)
    ]
    assert errors[0] == pytest.approx(0.04, rel=1e-6)
    assert errors[1] < errors[0]


def test_hvp_step_must_be_positive():
    with pytest.raises(ConfigurationError):
        hvp_hessian_free(cubic_gradient, np.array([1.0]), np.array([1.0]), 0.0)


def test_explicit_hessian_of_quadratic_form():
    matrix = np.array([[2.0, 0.5], [0.5, 1.0]])
    hessian = explicit_hessian(lambda phi: matrix @ phi, np.array([0.3, -0.2]))
    np.testing.assert_allclose(hessian, matrix, atol=1e-8)


def test_oracle_on_one_dimensional_quadratic(quadratic_spec):
    phi_star = np.array([1 / 3])
    g = gradient(quadratic_spec, phi_star, quadratic_batch())
    assert g[0] == pytest.approx(-1 / 3, abs=1e-15)
    result = implicit_meta_gradient_oracle(quadratic_spec, phi_star, 1.0, g, quadratic_batch())
    assert result[0] == pytest.approx(-2 / 9, abs=1e-8)


def test_oracle_is_linear_in_g(quadratic_spec):
    phi = np.array([0.2])
    batch = quadratic_batch()
    single = implicit_meta_gradient_oracle(quadratic_spec, phi, 1.0, np.array([0.5]), batch)
    scaled = implicit_meta_gradient_oracle(quadratic_spec, phi, 1.0, np.array([1.5]), batch)
    assert scaled[0] == pytest.approx(3 * single[0], rel=1e-10)


def test_oracle_on_five_dimensional_quadratic():
    # diagonal A from per-coordinate inputs; closed form lam * (A + lam I)^-1 g
    spec = ModelSpec((5, 1), use_bias=False)
    batch = Batch(np.diag([1.0, 2.0, 0.5, 1.5, 3.0]), np.zeros((5, 1)))
    hessian = np.diag(np.array([1.0, 4.0, 0.25, 2.25, 9.0]) / 5)
    lam = 2.0
    g = np.array([1.0, -1.0, 0.5, 2.0, -0.3])
    expected = lam * np.linalg.solve(hessian + lam * np.eye(5), g)
    result = implicit_meta_gradient_oracle(spec, np.zeros(5), lam, g, batch)
    np.testing.assert_allclose(result, expected, atol=1e-8)


def test_oracle_without_curvature_returns_g():
    spec = ModelSpec((2, 1), use_bias=False)
    batch = Batch(np.zeros((3, 2)), np.zeros((3, 1)))
    g = np.array([0.4, -1.0])
    np.testing.assert_allclose(implicit_meta_gradient_oracle(spec, np.ones(2), 1.0, g, batch), g)


def test_oracle_rejects_singular_systems():
    # H = diag(1, 0): a tiny lam makes I + H / lam ill-conditioned
    spec = ModelSpec((2, 1), use_bias=False)
    batch = Batch([[1.0, 0.0]], [[0.0]])
    with pytest.raises(ConfigurationError):
        implicit_meta_gradient_oracle(spec, np.zeros(2), -1.0, np.ones(2), batch)
    with pytest.raises(NumericError):
        implicit_meta_gradient_oracle(spec, np.zeros(2), 1e-13, np.ones(2), batch)


def test_oracle_limited_to_small_models():
    spec = ModelSpec((20, 20))
    with pytest.raises(ConfigurationError):
        implicit_meta_gradient_oracle(
            spec, np.zeros(spec.param_count), 1.0, np.zeros(spec.param_count),
            Batch(np.zeros((1, 20)), np.zeros((1, 20))),
        )
