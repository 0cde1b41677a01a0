"""Hessian-free Hessian-vector products and the explicit implicit-gradient oracle."""
from typing import Callable

import numpy as np
from scipy import linalg

from fedsim.errors import ConfigurationError, NumericError
from fedsim.model import Batch, ModelSpec, gradient
from fedsim.utilities.vectors import ParamVector, check_finite, check_same_length

GradientFn = Callable[[ParamVector], ParamVector]

ORACLE_FD_STEP = 1e-5
ORACLE_MAX_PARAMS = 200
ORACLE_MAX_CONDITION = 1e12


def hvp_hessian_free(gradfn, phi, v, delta):  # type: (GradientFn, ParamVector, ParamVector, float) -> ParamVector  # noqa: E501
    """Estimate H(phi) @ v by a central difference of two gradient evaluations.

    The error is at most rho * delta * |v|^2 for a Hessian that is rho-Lipschitz.
    """
    if not delta > 0:
        raise ConfigurationError('finite-difference step must be positive, got {}'.format(delta))
    check_same_length(phi, v)
    grad_plus = gradfn(phi + delta * v)
    grad_minus = gradfn(phi - delta * v)
    estimate = (grad_plus - grad_minus) / (2.0 * delta)
    check_finite(estimate, 'Hessian-vector product')
    return estimate


def explicit_hessian(gradfn, phi, step=ORACLE_FD_STEP):  # type: (GradientFn, ParamVector, float) -> np.ndarray  # noqa: E501
    """Build the full Hessian column by column from central differences of gradfn.

    The result is symmetrised. Only meant for small models.
    """
    dim = len(phi)
    hessian = np.zeros((dim, dim))
    for column in range(dim):
        offset = np.zeros(dim)
        offset[column] = step
        hessian[:, column] = (gradfn(phi + offset) - gradfn(phi - offset)) / (2.0 * step)
    return 0.5 * (hessian + hessian.T)


def implicit_meta_gradient_oracle(
    spec,  # type: ModelSpec
    phi,  # type: ParamVector
    lam,  # type: float
    g,  # type: ParamVector
    batch,  # type: Batch
):  # type: (...) -> ParamVector
    """Return (I + H/lam)^-1 g with H the explicit Hessian of the batch loss at phi.

    Ground truth for meta-gradient estimates in tests; d must be small.
    """
    if not lam > 0:
        raise ConfigurationError('regularization strength must be positive, got {}'.format(lam))
    if spec.param_count > ORACLE_MAX_PARAMS:
        raise ConfigurationError('oracle limited to {} parameters, model has {}'.format(
            ORACLE_MAX_PARAMS, spec.param_count))
    check_same_length(phi, g)

    def batch_gradient(params):  # type: (ParamVector) -> ParamVector
        return gradient(spec, params, batch)

    hessian = explicit_hessian(batch_gradient, phi)
    system = np.eye(len(phi)) + hessian / lam
    condition = np.linalg.cond(system)
    if not condition < ORACLE_MAX_CONDITION:
        raise NumericError('implicit system is singular', condition=condition)
    solution = linalg.solve(system, g, assume_a='sym')
    check_finite(solution, 'implicit meta-gradient')
    return solution
