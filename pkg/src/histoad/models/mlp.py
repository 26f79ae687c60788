"""Dense scoring heads with hand-written backpropagation.

Parameters are float64 throughout. A head is a list of affine layers, each
followed by ``relu`` or ``identity``. Gradients use the same container type
as parameters so optimizers can treat both alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from ..errors import InvalidInputError

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    """Affine map ``W x + b`` with ``W`` of shape ``(out, in)``."""
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise InvalidInputError(
                f"Layer shapes incompatible: weight {self.weight.shape}, bias {self.bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"Unknown activation '{self.activation}'")

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])


@dataclass
class MlpParams:
    """Ordered layers of a head (also used to hold gradients)."""
    layers: List[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise InvalidInputError("A head needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidInputError(
                    f"Layer widths incompatible: {prev.out_dim} feeds {nxt.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def num_params(self) -> int:
        return sum(layer.weight.size + layer.bias.size for layer in self.layers)

    def arrays(self) -> List[np.ndarray]:
        """Weight and bias arrays in declaration order (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation)
                          for l in self.layers])

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, vector: np.ndarray) -> "MlpParams":
        """New params with this architecture and values taken from ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.num_params:
            raise InvalidInputError(f"Expected {self.num_params} values, got {vector.size}")
        layers, pos = [], 0
        for l in self.layers:
            w = vector[pos:pos + l.weight.size].reshape(l.weight.shape)
            pos += l.weight.size
            b = vector[pos:pos + l.bias.size]
            pos += l.bias.size
            layers.append(DenseLayer(w.copy(), b.copy(), l.activation))
        return MlpParams(layers)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))

    def architecture(self) -> List[dict]:
        return [{"in": l.in_dim, "out": l.out_dim, "activation": l.activation} for l in self.layers]


def init_mlp(dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for weights and biases."""
    if len(activations) != len(dims) - 1:
        raise InvalidInputError("Need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append(DenseLayer(w, b, act))
    return MlpParams(layers)


def identity_params(dim: int, n_layers: int = 1, activation: str = "identity") -> MlpParams:
    """Square layers with ``W = I`` and ``b = 0``."""
    return MlpParams([DenseLayer(np.eye(dim), np.zeros(dim), activation) for _ in range(n_layers)])


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0.0) if activation == "relu" else z


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the head on one vector or on a batch of row vectors."""
    out, _ = forward_with_cache(params, x)
    return out


def forward_with_cache(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, list]:
    """Forward pass keeping each layer's input and pre-activation for backprop."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    h = arr[None, :] if single else arr
    if h.ndim != 2 or h.shape[1] != params.input_dim:
        raise InvalidInputError(
            f"Input width {h.shape[-1] if h.ndim else 0} does not match head input {params.input_dim}"
        )
    cache = []
    for layer in params.layers:
        z = h @ layer.weight.T + layer.bias
        cache.append((h, z))
        h = _activate(z, layer.activation)
    return (h[0] if single else h), cache


def backward(params: MlpParams, cache: list, d_out: np.ndarray) -> MlpParams:
    """Gradients of ``sum(d_out * output)`` with respect to every parameter.

    ``d_out`` has the batch shape of the forward output; gradients are summed
    over batch rows.
    """
    delta = np.asarray(d_out, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    grads = []
    for layer, (h_in, z) in zip(reversed(params.layers), reversed(cache)):
        if layer.activation == "relu":
            delta = delta * (z > 0.0)
        grads.append(DenseLayer(delta.T @ h_in, delta.sum(axis=0), layer.activation))
        delta = delta @ layer.weight
    return MlpParams(list(reversed(grads)))


def head_dims(objective: str, input_dim: int, hidden_width: int, embedding_dim: int,
              bottleneck_dim: int = None) -> Tuple[List[int], List[str]]:
    """Layer widths and activations of the default head for an objective."""
    if objective == "bce":
        return [input_dim, hidden_width, 1], ["relu", "identity"]
    if objective in ("hsc", "deepsad", "compactness"):
        return [input_dim, hidden_width, embedding_dim], ["relu", "identity"]
    if objective == "autoencoder":
        bottleneck = bottleneck_dim or max(1, input_dim // 4)
        return ([input_dim, hidden_width, bottleneck, hidden_width, input_dim],
                ["relu", "identity", "relu", "identity"])
    raise InvalidInputError(f"Unknown objective '{objective}'")
