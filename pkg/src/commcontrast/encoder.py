"""Two-layer GCN encoder and the shared two-layer MLP projector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .graph import ConfigError
from .ndtensor import Tensor

ACTIVATIONS = ("relu", "prelu", "rrelu", "leaky_relu", "identity")

# RReLU is run with its deterministic (evaluation-mode) slope, the midpoint of [1/8, 1/3].
RRELU_SLOPE = (1.0 / 8.0 + 1.0 / 3.0) / 2.0
PRELU_INIT = 0.25


@dataclass(frozen=True)
class EncoderDims:
    in_dim: int
    hidden_dim: int
    out_dim: int
    activation: str = "prelu"

    def __post_init__(self):
        if min(self.in_dim, self.hidden_dim, self.out_dim) <= 0:
            raise ConfigError(f"encoder dimensions must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(dims: EncoderDims, seed: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases. Keys: W1, W2, P1, b1, P2, b2 (+ PReLU slopes)."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    d = dims.out_dim
    params = {
        "W1": glorot(rng, dims.in_dim, dims.hidden_dim),
        "W2": glorot(rng, dims.hidden_dim, d),
        "P1": glorot(rng, d, d),
        "b1": np.zeros((1, d)),
        "P2": glorot(rng, d, d),
        "b2": np.zeros((1, d)),
    }
    if dims.activation == "prelu":
        params["enc_slope"] = np.full((1, 1), PRELU_INIT)
        params["proj_slope"] = np.full((1, 1), PRELU_INIT)
    return params


def activate(x: Tensor, kind: str, slope: Tensor | None = None) -> Tensor:
    if kind == "relu":
        return nd.relu(x)
    if kind == "prelu":
        if slope is None:
            raise ConfigError("prelu needs a slope parameter")
        return nd.prelu(x, slope)
    if kind == "rrelu":
        return nd.leaky_relu(x, RRELU_SLOPE)
    if kind == "leaky_relu":
        return nd.leaky_relu(x, 0.01)
    if kind == "identity":
        return x
    raise ConfigError(f"unknown activation {kind!r}")


def encode(x: Tensor, a_norm: Tensor, params: dict[str, Tensor], activation: str = "prelu") -> Tensor:
    """Z = A_norm . act(A_norm . X . W1) . W2 (last layer linear)."""
    x, a_norm = nd._wrap(x), nd._wrap(a_norm)
    w1, w2 = params["W1"], params["W2"]
    if x.shape[1] != w1.shape[0]:
        raise nd.DimensionError(f"encode: features {x.shape} do not match W1 {w1.shape}")
    if a_norm.shape != (x.shape[0], x.shape[0]):
        raise nd.DimensionError(f"encode: adjacency {a_norm.shape} does not match {x.shape[0]} nodes")
    h = activate(a_norm @ (x @ w1), activation, params.get("enc_slope"))
    return a_norm @ (h @ w2)


def project(z: Tensor, params: dict[str, Tensor], activation: str = "prelu") -> Tensor:
    """P = act(Z P1 + b1) P2 + b2."""
    z = nd._wrap(z)
    if z.shape[1] != params["P1"].shape[0]:
        raise nd.DimensionError(f"project: representations {z.shape} do not match P1 {params['P1'].shape}")
    h = activate(z @ params["P1"] + params["b1"], activation, params.get("proj_slope"))
    return h @ params["P2"] + params["b2"]
