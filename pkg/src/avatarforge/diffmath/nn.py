"""MLPs, positional encoding, and logistic-density utilities."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ParameterError
from . import tensor as T
from .tensor import Tensor

_ACTIVATIONS = {"softplus": T.softplus, "relu": T.relu, "tanh": T.tanh}
_OUTPUT_ACTIVATIONS = {"none": None, "sigmoid": T.sigmoid}


class Mlp:
    """Fully connected network with per-layer weights on the gradient record.

    ``widths`` lists the input width followed by each layer's output width,
    so ``len(widths) - 1`` linear layers.  Weights start uniform in
    +/- sqrt(6 / (fan_in + fan_out)) from the given seed; biases start at
    zero.  The same seed always rebuilds the same network.
    """

    def __init__(self, widths, hidden_activation: str = "relu",
                 output_activation: str = "none", seed: int = 0):
        if len(widths) < 2:
            raise ParameterError("an MLP needs at least one layer")
        if hidden_activation not in _ACTIVATIONS:
            raise ParameterError(f"unknown hidden activation {hidden_activation!r}")
        if output_activation not in _OUTPUT_ACTIVATIONS:
            raise ParameterError(f"unknown output activation {output_activation!r}")
        self.widths = [int(w) for w in widths]
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise DimensionError(
                f"layer 0 expects input width {self.widths[0]}, got {x.shape}")
        act = _ACTIVATIONS[self.hidden_activation]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.add(T.matmul(x, w), b)
            if i < self.n_layers - 1:
                x = act(x)
        out_act = _OUTPUT_ACTIVATIONS[self.output_activation]
        return out_act(x) if out_act is not None else x

    __call__ = forward

    def forward_raw(self, x: np.ndarray) -> np.ndarray:
        """Record-free forward pass for scoring and sampling loops."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise DimensionError(
                f"layer 0 expects input width {self.widths[0]}, got {x.shape}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.data + b.data
            if i < self.n_layers - 1:
                if self.hidden_activation == "relu":
                    x = np.maximum(x, 0.0)
                elif self.hidden_activation == "softplus":
                    x = np.logaddexp(0.0, x)
                else:
                    x = np.tanh(x)
        if self.output_activation == "sigmoid":
            x = T._expit(x)
        return x

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]

    def load_state_arrays(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise DimensionError(
                f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise DimensionError(f"array shape {a.shape} != {p.shape}")
            p.data = a.copy()

    def spec(self) -> dict:
        return {
            "widths": self.widths,
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "seed": self.seed,
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "Mlp":
        return cls(spec["widths"], spec["hidden_activation"],
                   spec["output_activation"], spec["seed"])


def positional_encode(points, bands: int):
    """Frequency features: raw coords, then (sin, cos) pairs per octave.

    For input of shape (n, d) the result is (n, d + 2 * d * bands), laid out
    as [p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(B-1) pi p), cos(...)].
    ``bands = 0`` returns the input unchanged.
    """
    if bands < 0:
        raise ParameterError("bands must be >= 0")
    p = T.as_tensor(points)
    if bands == 0:
        return p
    parts = [p]
    for k in range(bands):
        scaled = T.mul(p, Tensor(np.pi * (2.0 ** k)))
        parts.append(T.sin(scaled))
        parts.append(T.cos(scaled))
    return T.concat(parts, axis=1)


def positional_encode_raw(points: np.ndarray, bands: int) -> np.ndarray:
    """numpy twin of :func:`positional_encode` for record-free passes."""
    if bands < 0:
        raise ParameterError("bands must be >= 0")
    p = np.asarray(points, dtype=np.float64)
    if bands == 0:
        return p
    parts = [p]
    for k in range(bands):
        scaled = p * (np.pi * (2.0 ** k))
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=1)


def logistic_cdf(x, s: float):
    """CDF of the logistic distribution with sharpness s: 1/(1 + e^(-s x))."""
    if s <= 0:
        raise ParameterError(f"sharpness must be positive, got {s}")
    return T._expit(np.asarray(x, dtype=np.float64) * s)


def logistic_density(x, s: float):
    """Density of the logistic distribution, the derivative of its CDF."""
    if s <= 0:
        raise ParameterError(f"sharpness must be positive, got {s}")
    c = T._expit(np.asarray(x, dtype=np.float64) * s)
    return s * c * (1.0 - c)
