"""Small fully-connected models over flat parameter vectors, with exact backprop gradients.

Parameters are laid out layer by layer: the (in x out) weight matrix in row-major order,
followed by the out-sized bias when the model uses biases.
"""
from enum import Enum
from logging import getLogger
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from fedsim.errors import ConfigurationError, NumericError
from fedsim.utilities.vectors import ParamVector

log = getLogger(__name__)

INIT_SCALE = 1.0  # Xavier-style normal init multiplier


class ACTIVATION(Enum):
    """Hidden-layer nonlinearity."""
    TANH = 'tanh'  # type: str
    RELU = 'relu'  # type: str


class LOSS_KIND(Enum):
    """Per-sample loss, averaged over the batch."""
    MSE = 'mse'  # type: str  # 1/2 * squared error summed over outputs
    SOFTMAX_CROSS_ENTROPY = 'softmax_cross_entropy'  # type: str


_ModelSpecTuple = NamedTuple(
    'ModelSpec',
    [
        ('layer_sizes', Tuple[int, ...]),
        ('activation', ACTIVATION),
        ('loss_kind', LOSS_KIND),
        ('use_bias', bool),
    ],
)


class ModelSpec(_ModelSpecTuple):
    """Architecture and loss of a small MLP: maps a flat parameter vector and a batch to a loss."""

    def __new__(
        cls,
        layer_sizes,  # type: Sequence[int]
        activation=ACTIVATION.TANH,  # type: ACTIVATION
        loss_kind=LOSS_KIND.MSE,  # type: LOSS_KIND
        use_bias=True,  # type: bool
    ):  # type: (...) -> ModelSpec
        layer_sizes = tuple(int(size) for size in layer_sizes)
        if len(layer_sizes) < 2 or any(size < 1 for size in layer_sizes):
            raise ConfigurationError('layer_sizes must hold at least two positive integers')
        return super().__new__(cls, layer_sizes, activation, loss_kind, use_bias)  # type: ignore

    @property
    def input_dim(self):  # type: () -> int
        return self.layer_sizes[0]

    @property
    def output_dim(self):  # type: () -> int
        return self.layer_sizes[-1]

    @property
    def param_count(self):  # type: () -> int
        """Number of scalar parameters d."""
        return sum(shape_in * shape_out + (shape_out if self.use_bias else 0)
                   for shape_in, shape_out in self.layer_shapes)

    @property
    def layer_shapes(self):  # type: () -> List[Tuple[int, int]]
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def unflatten(self, params):  # type: (ParamVector) -> List[Tuple[np.ndarray, np.ndarray]]
        """Return (weights, bias) views per layer; bias is a zero vector without biases."""
        if params.ndim != 1 or len(params) != self.param_count:
            raise ConfigurationError('expected a parameter vector of length {}, got shape {}'
                                     .format(self.param_count, params.shape))
        layers = []
        offset = 0
        for shape_in, shape_out in self.layer_shapes:
            weights = params[offset:offset + shape_in * shape_out].reshape(shape_in, shape_out)
            offset += shape_in * shape_out
            if self.use_bias:
                bias = params[offset:offset + shape_out]
                offset += shape_out
            else:
                bias = np.zeros(shape_out)
            layers.append((weights, bias))
        return layers

    def flatten(self, layers):  # type: (List[Tuple[np.ndarray, np.ndarray]]) -> ParamVector
        """Inverse of unflatten."""
        pieces = []  # type: List[np.ndarray]
        for weights, bias in layers:
            pieces.append(weights.reshape(-1))
            if self.use_bias:
                pieces.append(bias.reshape(-1))
        return np.concatenate(pieces).astype(np.float64)


_BatchTuple = NamedTuple('Batch', [('inputs', np.ndarray), ('targets', np.ndarray)])


class Batch(_BatchTuple):
    """Samples as rows: inputs (n x input_dim) and targets (n x target_dim)."""

    def __new__(cls, inputs, targets):  # type: (np.ndarray, np.ndarray) -> Batch
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        if targets.ndim == 1:
            targets = targets.reshape(-1, 1)
        if len(inputs) != len(targets):
            raise ConfigurationError('inputs and targets hold {} and {} samples'.format(
                len(inputs), len(targets)))
        return super().__new__(cls, inputs, targets)  # type: ignore

    @property
    def size(self):  # type: () -> int
        return len(self.inputs)

    def take(self, indices):  # type: (np.ndarray) -> Batch
        """Return the samples at the given row indices."""
        return Batch(self.inputs[indices], self.targets[indices])

    @staticmethod
    def empty(input_dim, target_dim):  # type: (int, int) -> Batch
        return Batch(np.zeros((0, input_dim)), np.zeros((0, target_dim)))

    @staticmethod
    def concatenate(batches):  # type: (Sequence[Batch]) -> Batch
        if not batches:
            raise ConfigurationError('cannot concatenate an empty list of batches')
        return Batch(
            np.concatenate([batch.inputs for batch in batches]),
            np.concatenate([batch.targets for batch in batches]),
        )


def one_hot(labels, n_classes):  # type: (np.ndarray, int) -> np.ndarray
    """Encode integer labels as one-hot rows."""
    encoded = np.zeros((len(labels), n_classes))
    encoded[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return encoded


def init_params(spec, rng_seed):  # type: (ModelSpec, int) -> ParamVector
    """Draw initial parameters: normal weights scaled by sqrt(1/fan_in), zero biases."""
    rng = np.random.default_rng(rng_seed)
    layers = []
    for shape_in, shape_out in spec.layer_shapes:
        weights = rng.normal(0.0, INIT_SCALE * np.sqrt(1.0 / shape_in), size=(shape_in, shape_out))
        layers.append((weights, np.zeros(shape_out)))
    return spec.flatten(layers)


def forward_loss(spec, params, batch):  # type: (ModelSpec, ParamVector, Batch) -> float
    """Return the mean loss of the model over the batch."""
    _check_batch(spec, batch)
    _, _, outputs = _forward(spec, params, batch.inputs)
    loss, _ = _loss_and_output_delta(spec, outputs, batch.targets)
    return loss


def gradient(spec, params, batch):  # type: (ModelSpec, ParamVector, Batch) -> ParamVector
    """Return the exact gradient of forward_loss with respect to params (backpropagation)."""
    _check_batch(spec, batch)
    layers, activations, outputs = _forward(spec, params, batch.inputs)
    _, delta = _loss_and_output_delta(spec, outputs, batch.targets)

    grads = []  # type: List[Tuple[np.ndarray, np.ndarray]]
    for layer_index in reversed(range(len(layers))):
        weights, _ = layers[layer_index]
        layer_input = activations[layer_index]
        grads.append((layer_input.T @ delta, delta.sum(axis=0)))
        if layer_index > 0:
            delta = (delta @ weights.T) * _activation_derivative(spec.activation, layer_input)
    grads.reverse()

    grad = spec.flatten(grads)
    if not np.all(np.isfinite(grad)):
        raise NumericError('non-finite gradient', layer_index=len(layers) - 1)
    return grad


def predict(spec, params, inputs):  # type: (ModelSpec, ParamVector, np.ndarray) -> np.ndarray
    """Return raw model outputs (regression values or class logits) for each input row."""
    _, _, outputs = _forward(spec, params, np.asarray(inputs, dtype=np.float64))
    return outputs


def _forward(
    spec,  # type: ModelSpec
    params,  # type: ParamVector
    inputs,  # type: np.ndarray
):  # type: (...) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], List[np.ndarray], np.ndarray]
    """Run the network; returns layer views, each layer's input activation and the outputs."""
    layers = spec.unflatten(params)
    activations = []  # type: List[np.ndarray]
    hidden = inputs
    for layer_index, (weights, bias) in enumerate(layers):
        activations.append(hidden)
        hidden = hidden @ weights + bias
        # the output layer is linear
        if layer_index < len(layers) - 1:
            hidden = _activate(spec.activation, hidden)
        if not np.all(np.isfinite(hidden)):
            raise NumericError('non-finite activations', layer_index=layer_index)
    return layers, activations, hidden


def _activate(activation, values):  # type: (ACTIVATION, np.ndarray) -> np.ndarray
    if activation == ACTIVATION.TANH:
        return np.tanh(values)
    return np.maximum(values, 0.0)


def _activation_derivative(activation, activated):  # type: (ACTIVATION, np.ndarray) -> np.ndarray
    """Derivative expressed through the activated values."""
    if activation == ACTIVATION.TANH:
        return 1.0 - activated * activated
    return (activated > 0.0).astype(np.float64)


def _loss_and_output_delta(
    spec,  # type: ModelSpec
    outputs,  # type: np.ndarray
    targets,  # type: np.ndarray
):  # type: (...) -> Tuple[float, np.ndarray]
    """Return the mean loss and its derivative with respect to the outputs."""
    num_samples = len(outputs)
    if spec.loss_kind == LOSS_KIND.MSE:
        residual = outputs - targets
        loss = 0.5 * float(np.sum(residual * residual)) / num_samples
        delta = residual / num_samples
    else:
        shifted = outputs - outputs.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        loss = -float(np.sum(targets * log_probs)) / num_samples
        delta = (np.exp(log_probs) - targets) / num_samples
    if not np.isfinite(loss):
        raise NumericError('non-finite loss', layer_index=len(spec.layer_shapes) - 1)
    return loss, delta


def _check_batch(spec, batch):  # type: (ModelSpec, Batch) -> None
    if batch.size < 1:
        raise ConfigurationError('batch must hold at least one sample')
    if batch.inputs.shape[1] != spec.input_dim:
        raise ConfigurationError('batch inputs have {} columns, model expects {}'.format(
            batch.inputs.shape[1], spec.input_dim))
    if batch.targets.shape[1] != spec.output_dim:
        raise ConfigurationError('batch targets have {} columns, model expects {}'.format(
            batch.targets.shape[1], spec.output_dim))
