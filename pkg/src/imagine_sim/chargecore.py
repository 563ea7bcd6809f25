"""Primitive capacitive-network arithmetic.

Charge-conserving sharing, ideal precharge and noise sampling on
capacitor nodes.  Every analog block of the macro is built on these
three operations.

Summation convention: share() always accumulates charge in ascending
node-index order with compensated (Kahan) summation, so the result is
independent of the order in which callers list the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import UsageError

# Boltzmann constant [J/K]
K_B = 1.380649e-23

#: default simulation temperature [K]
T_DEFAULT = 300.0


@dataclass
class CapNode:
    """One capacitor node: capacitance [F] and the voltage stored on it."""

    capacitance: float
    voltage: float = 0.0
    index: int = 0

    def __post_init__(self):
        if self.capacitance <= 0.0:
            raise UsageError(f"capacitance must be > 0, got {self.capacitance}")
        if not np.isfinite(self.voltage):
            raise UsageError(f"voltage must be finite, got {self.voltage}")

    @property
    def charge(self) -> float:
        return self.capacitance * self.voltage


def _kahan_sum(values: Iterable[float]) -> float:
    total = 0.0
    comp = 0.0
    for v in values:
        y = v - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total


def share(nodes: Sequence[CapNode]) -> float:
    """Charge-share all nodes; every node ends at the common voltage.

    Returns V* = sum(C_i V_i) / sum(C_i).  The weighted mean is computed
    as sum((C_i / C_tot) * V_i) so that the equal-capacitance case is an
    exact binary average in float64; total charge is conserved to a
    relative 1e-12 either way.
    """
    if len(nodes) < 2:
        raise UsageError("share() needs at least two nodes")
    ordered = sorted(nodes, key=lambda n: n.index)
    c_tot = _kahan_sum(n.capacitance for n in ordered)
    v_star = _kahan_sum((n.capacitance / c_tot) * n.voltage for n in ordered)
    for n in nodes:
        n.voltage = v_star
    return v_star


def precharge(node: CapNode, level: float, v_ddh: float) -> None:
    """Drive the node to `level` exactly (ideal driver), rails [0, v_ddh]."""
    if not 0.0 <= level <= v_ddh:
        raise UsageError(f"precharge level {level} V outside rails [0, {v_ddh}] V")
    node.voltage = level


@dataclass
class NoiseSource:
    """A seeded Gaussian noise source attached to capacitor sampling.

    kind:
      - "thermal-kTC": sigma derived per-node as sqrt(k_B * T / C)
      - "gaussian-fixed-sigma": sigma_or_temp is the sigma in volts
      - "none": always returns 0

    Streams with distinct (seed, stream_id) keys are statistically
    independent (numpy SeedSequence keying).
    """

    kind: str = "none"
    sigma_or_temp: float = T_DEFAULT
    seed: int = 0
    stream_id: int = 0
    _rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("thermal-kTC", "gaussian-fixed-sigma", "none"):
            raise UsageError(f"unknown noise kind {self.kind!r}")
        if self._rng is None:
            self._rng = make_stream(self.seed, self.stream_id)

    def sigma_for(self, node: CapNode) -> float:
        if self.kind == "thermal-kTC":
            return float(np.sqrt(K_B * self.sigma_or_temp / node.capacitance))
        if self.kind == "gaussian-fixed-sigma":
            return self.sigma_or_temp
        return 0.0

    def sample(self, node: CapNode, size=None):
        """Zero-mean Gaussian sample(s) with kind-dependent sigma."""
        if self.kind == "none":
            return 0.0 if size is None else np.zeros(size)
        s = self.sigma_for(node)
        if size is None:
            return float(self._rng.normal(0.0, s))
        return self._rng.normal(0.0, s, size=size)


def sample_noise(src: NoiseSource, node: CapNode) -> float:
    """One noise sample for `node` from source `src`."""
    return src.sample(node)


def make_stream(seed: int, *stream_key: int) -> np.random.Generator:
    """Deterministic, disjoint RNG stream keyed by (seed, *stream_key)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream_key)]))
