#!/usr/bin/env python3
"""
Dense Q-network in plain numpy.

ReLU hidden layers, linear output, squared error on the Q-value of the
taken action, Adam updates and a versioned binary weights format.
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config_loader import ConfigError

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b'JMQN'
WEIGHTS_VERSION = 1


class ShapeError(ValueError):
    """Raised when an input or parameter array has the wrong shape."""


class WeightsFileError(ValueError):
    """Raised when a weights file is malformed or does not fit the network."""


@dataclass
class NetworkConfig:
    hidden_sizes: List[int] = field(default_factory=lambda: [500, 1000])
    dtype: str = 'float64'

    @classmethod
    def from_dict(cls, data: Dict) -> 'NetworkConfig':
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        config = cls(**known)
        if not config.hidden_sizes or any(int(h) < 1 for h in config.hidden_sizes):
            raise ConfigError("network.hidden_sizes must be a non-empty list of positive sizes")
        if config.dtype not in ('float64', 'float32'):
            raise ConfigError(f"network.dtype must be float64 or float32, got {config.dtype}")
        return config

    def layer_sizes(self, input_size: int, output_size: int) -> List[int]:
        return [input_size, *[int(h) for h in self.hidden_sizes], output_size]


@dataclass
class NetworkParams:
    """Weights (fan_in x fan_out) and biases of every layer."""
    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    seed: Optional[int] = None

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> List[np.ndarray]:
        """Parameters in file order: W1, b1, W2, b2, ..."""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def equals(self, other: 'NetworkParams') -> bool:
        return (self.layer_sizes == other.layer_sizes
                and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())))

    def zeros_like(self) -> 'NetworkParams':
        return NetworkParams(list(self.layer_sizes), [np.zeros_like(w) for w in self.weights],
                             [np.zeros_like(b) for b in self.biases], self.seed)


@dataclass
class Minibatch:
    inputs: np.ndarray
    actions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ShapeError(f"Minibatch inputs must be 2-D, got shape {self.inputs.shape}")
        batch = self.inputs.shape[0]
        if self.actions.shape != (batch,) or self.targets.shape != (batch,):
            raise ShapeError(f"Inconsistent minibatch: inputs {self.inputs.shape}, "
                             f"actions {self.actions.shape}, targets {self.targets.shape}")


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, learning_rate: float = 1e-5, beta1: float = 0.9,
                   beta2: float = 0.999, epsilon: float = 1e-8) -> 'AdamState':
        arrays = params.arrays()
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays],
                   learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def save(self, path: str):
        payload = {f"m{i}": m for i, m in enumerate(self.m)}
        payload.update({f"v{i}": v for i, v in enumerate(self.v)})
        np.savez(path, step=np.array(self.step), **payload)

    @classmethod
    def load(cls, path: str, params: NetworkParams, **hyper) -> 'AdamState':
        state = cls.for_params(params, **hyper)
        with np.load(path) as data:
            state.step = int(data['step'])
            for i in range(len(state.m)):
                if data[f"m{i}"].shape != state.m[i].shape:
                    raise WeightsFileError(f"Optimizer moment {i} has shape {data[f'm{i}'].shape}, "
                                           f"expected {state.m[i].shape}")
                state.m[i] = data[f"m{i}"].copy()
                state.v[i] = data[f"v{i}"].copy()
        return state


def init_params(layer_sizes: Sequence[int], seed: int = 0, dtype: str = 'float64') -> NetworkParams:
    """He-uniform weights and zero biases from a seeded generator."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return NetworkParams(list(layer_sizes), weights, biases, seed)


def _as_batch(params: NetworkParams, observation: np.ndarray) -> Tuple[np.ndarray, bool]:
    x = np.asarray(observation, dtype=params.weights[0].dtype)
    single = x.ndim == 1
    if single:
        x = x[np.newaxis, :]
    if x.ndim != 2 or x.shape[1] != params.layer_sizes[0]:
        raise ShapeError(f"Expected observations of width {params.layer_sizes[0]}, got shape {np.shape(observation)}")
    return x, single


def _forward_cached(params: NetworkParams, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    activations = [x]
    pre_activations = []
    a = x
    last = params.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        pre_activations.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        activations.append(a)
    return a, activations, pre_activations


def forward(params: NetworkParams, observation: np.ndarray) -> np.ndarray:
    """Q-values for one observation (shape (n,)) or a batch (shape (B, n))."""
    x, single = _as_batch(params, observation)
    q, _, _ = _forward_cached(params, x)
    return q[0] if single else q


def loss(params: NetworkParams, batch: Minibatch) -> float:
    q = forward(params, batch.inputs)
    predicted = q[np.arange(len(batch.actions)), batch.actions]
    return float(np.mean((predicted - batch.targets) ** 2))


def backward(params: NetworkParams, batch: Minibatch) -> Tuple[float, NetworkParams]:
    """Mean squared error on the taken actions and its gradient with respect to every parameter."""
    x, _ = _as_batch(params, batch.inputs)
    q, activations, pre_activations = _forward_cached(params, x)
    n = x.shape[0]
    rows = np.arange(n)
    error = q[rows, batch.actions] - batch.targets
    value = float(np.mean(error ** 2))

    delta = np.zeros_like(q)
    delta[rows, batch.actions] = 2.0 * error / n

    grads = params.zeros_like()
    for i in reversed(range(params.num_layers)):
        grads.weights[i] = activations[i].T @ delta
        grads.biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre_activations[i - 1] > 0.0)
    return value, grads


def adam_step(params: NetworkParams, adam: AdamState, gradients: NetworkParams) -> NetworkParams:
    """Bias-corrected Adam update applied in place."""
    adam.step += 1
    correction1 = 1.0 - adam.beta1 ** adam.step
    correction2 = 1.0 - adam.beta2 ** adam.step
    for i, (theta, g) in enumerate(zip(params.arrays(), gradients.arrays())):
        adam.m[i] = adam.beta1 * adam.m[i] + (1.0 - adam.beta1) * g
        adam.v[i] = adam.beta2 * adam.v[i] + (1.0 - adam.beta2) * g * g
        m_hat = adam.m[i] / correction1
        v_hat = adam.v[i] / correction2
        theta -= adam.learning_rate * m_hat / (np.sqrt(v_hat) + adam.epsilon)
    return params


def copy_params(src: NetworkParams) -> NetworkParams:
    return NetworkParams(list(src.layer_sizes), [w.copy() for w in src.weights],
                         [b.copy() for b in src.biases], src.seed)


# ----------------------------------------------------------------------
# Weights file
# ----------------------------------------------------------------------

def save_weights(params: NetworkParams, path: str):
    """Header (magic, version, layer sizes, seed) followed by little-endian float64 parameters."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    sizes = np.array(params.layer_sizes, dtype='<u4')
    header = (WEIGHTS_MAGIC
              + np.array([WEIGHTS_VERSION, len(sizes)], dtype='<u4').tobytes()
              + sizes.tobytes()
              + np.array([-1 if params.seed is None else params.seed], dtype='<i8').tobytes())
    payload = np.concatenate([a.astype('<f8').ravel() for a in params.arrays()])
    tmp_path = f"{path}.tmp"
    with open(tmp_path, 'wb') as f:
        f.write(header)
        f.write(payload.tobytes())
    os.replace(tmp_path, path)
    logger.debug(f"Saved {params.num_parameters} parameters to {path}")


def load_weights(path: str, expected_sizes: Optional[Sequence[int]] = None,
                 dtype: str = 'float64') -> NetworkParams:
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise WeightsFileError(f"Cannot read weights file {path}: {e}") from e

    if blob[:4] != WEIGHTS_MAGIC:
        raise WeightsFileError(f"{path} is not a weights file")
    version, count = np.frombuffer(blob, dtype='<u4', count=2, offset=4)
    if version != WEIGHTS_VERSION:
        raise WeightsFileError(f"Unsupported weights format version {version} in {path}")
    offset = 12
    sizes = [int(s) for s in np.frombuffer(blob, dtype='<u4', count=int(count), offset=offset)]
    offset += 4 * int(count)
    seed = int(np.frombuffer(blob, dtype='<i8', count=1, offset=offset)[0])
    offset += 8

    if expected_sizes is not None and list(expected_sizes) != sizes:
        raise WeightsFileError(f"Layer sizes {sizes} in {path} do not match network {list(expected_sizes)}")

    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    payload = np.frombuffer(blob, dtype='<f8', offset=offset)
    if payload.size != expected:
        raise WeightsFileError(f"{path} holds {payload.size} parameters, expected {expected}")

    weights, biases = [], []
    cursor = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(payload[cursor:cursor + fan_in * fan_out].reshape(fan_in, fan_out).astype(dtype))
        cursor += fan_in * fan_out
        biases.append(payload[cursor:cursor + fan_out].astype(dtype))
        cursor += fan_out
    return NetworkParams(sizes, weights, biases, None if seed < 0 else seed)


class QNetwork:
    """Online parameters plus their Adam state."""

    def __init__(self, layer_sizes: Sequence[int], seed: int = 0, learning_rate: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8,
                 dtype: str = 'float64'):
        self.params = init_params(layer_sizes, seed, dtype)
        self.adam = AdamState.for_params(self.params, learning_rate, beta1, beta2, epsilon)

    @property
    def layer_sizes(self) -> List[int]:
        return self.params.layer_sizes

    def predict(self, observation: np.ndarray) -> np.ndarray:
        return forward(self.params, observation)

    def train_on_batch(self, batch: Minibatch) -> float:
        """One Adam step on the minibatch; returns the loss before the step."""
        value, grads = backward(self.params, batch)
        if np.isfinite(value):
            adam_step(self.params, self.adam, grads)
        return value
