"""Bit-true integer inference of an exported network.

Everything here operates on the integers that actually ship in a model
file — offset-binary weights, 5b bias codes, gains, shifts — and on the
exact rational code transfer from hw.py.  No floats from training
survive into this path, so agreement with the accelerator runtime is
exact, not approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hw


@dataclass
class IntLayer:
    """Integer parameters of one fc layer."""

    weights: np.ndarray        # (C_in, C_out) offset-binary in [0, 2^r_w)
    r_in: int = 8
    r_w: int = 4
    r_out: int = 8
    gamma: int = 1
    beta: np.ndarray | None = None
    relu: bool = False
    shift: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.int64)
        if self.beta is None:
            self.beta = np.zeros(self.weights.shape[1], dtype=np.int64)
        self.beta = np.asarray(self.beta, dtype=np.int64)

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def signed_weights(self) -> np.ndarray:
        """Hardware weight values 2*w - (2^r_w - 1), odd integers."""
        return 2 * self.weights - (2 ** self.r_w - 1)


def layer_codes(x: np.ndarray, lay: IntLayer) -> np.ndarray:
    """Output codes of one layer for an (N, C_in) batch of input codes."""
    S = np.asarray(x, dtype=np.int64) @ lay.signed_weights
    return hw.codes_from_sums(S, lay.rows, lay.r_in, lay.r_w, lay.r_out,
                              lay.gamma, lay.beta)


def activation(codes: np.ndarray, lay: IntLayer, next_r_in: int) -> np.ndarray:
    """Inter-layer code nonlinearity: rectify at mid-rail, shift, clip."""
    if lay.relu:
        y = np.maximum(codes - 2 ** (lay.r_out - 1), 0)
    else:
        y = codes.copy()
    if lay.shift:
        y >>= lay.shift
    return np.clip(y, 0, 2 ** next_r_in - 1)


def forward(layers: list[IntLayer], x: np.ndarray) -> np.ndarray:
    """(N, C_in) input codes -> (N, C_out) final-layer codes."""
    x = np.asarray(x, dtype=np.int64)
    for i, lay in enumerate(layers):
        codes = layer_codes(x, lay)
        if i == len(layers) - 1:
            return codes
        x = activation(codes, lay, layers[i + 1].r_in)
    return codes


def predict(layers: list[IntLayer], x: np.ndarray) -> np.ndarray:
    return forward(layers, x).argmax(axis=1)


def accuracy(layers: list[IntLayer], x: np.ndarray,
             labels: np.ndarray) -> float:
    return float(np.mean(predict(layers, x) == labels))
