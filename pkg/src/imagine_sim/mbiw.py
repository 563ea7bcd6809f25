"""Multi-bit input-and-weight accumulation unit.

Bit-serial input accumulation (LSB first) by charge sharing between the
DPL load and the accumulation capacitor, followed by spatial weight
accumulation across a 4-column block by pairwise charge sharing, with
charge-injection and leakage error models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .chargecore import CapNode, share
from .dparray import ElectricalParams
from .errors import ConfigError, SequencingError, UsageError

LSB8 = 3.125e-3  # one 8b LSB on the 0.8 V rail


class Phase(Enum):
    DP = "DP"
    ACCUMULATE_IN = "AccumulateIn"
    WEIGHT_SELF = "WeightSelfWeight"
    WEIGHT_PAIR = "WeightPairShare"
    DONE = "Done"


@dataclass
class InjectionErrorModel:
    """Deterministic switch charge-injection error on the accumulation node.

    Default surface: bound * tanh(a (v_in - V_DDL)) * tanh(b (v_acc - V_DDL)),
    odd in both arguments, zero along the mid-rail axes and saturating at
    +/- bound.  A tabulated 2-D map (bilinear-interpolated) can be loaded
    instead via from_grid()/load_map().
    """

    bound: float = LSB8
    a: float = 8.0
    b: float = 8.0
    v_mid: float = 0.4
    enabled: bool = True
    # optional tabulated map
    grid_vin: np.ndarray = None
    grid_vacc: np.ndarray = None
    grid_err: np.ndarray = None

    def __call__(self, v_in: float, v_acc_prev: float) -> float:
        if not self.enabled:
            return 0.0
        if self.grid_err is not None:
            return self._interp(v_in, v_acc_prev)
        e = self.bound * np.tanh(self.a * (v_in - self.v_mid)) * np.tanh(
            self.b * (v_acc_prev - self.v_mid))
        return float(e)

    def _interp(self, v_in: float, v_acc: float) -> float:
        gi = np.clip(np.interp(v_in, self.grid_vin, np.arange(len(self.grid_vin))),
                     0, len(self.grid_vin) - 1)
        gj = np.clip(np.interp(v_acc, self.grid_vacc, np.arange(len(self.grid_vacc))),
                     0, len(self.grid_vacc) - 1)
        i0, j0 = int(gi), int(gj)
        i1, j1 = min(i0 + 1, len(self.grid_vin) - 1), min(j0 + 1, len(self.grid_vacc) - 1)
        fi, fj = gi - i0, gj - j0
        e = (self.grid_err[i0, j0] * (1 - fi) * (1 - fj)
             + self.grid_err[i1, j0] * fi * (1 - fj)
             + self.grid_err[i0, j1] * (1 - fi) * fj
             + self.grid_err[i1, j1] * fi * fj)
        return float(np.clip(e, -self.bound, self.bound))

    @classmethod
    def from_grid(cls, vin: np.ndarray, vacc: np.ndarray, err: np.ndarray,
                  bound: float = LSB8) -> "InjectionErrorModel":
        err = np.asarray(err, dtype=float)
        if np.max(np.abs(err)) > bound + 1e-15:
            raise UsageError("tabulated injection map exceeds its bound")
        return cls(bound=bound, grid_vin=np.asarray(vin, float),
                   grid_vacc=np.asarray(vacc, float), grid_err=err)

    @classmethod
    def load_map(cls, path: str, bound: float = LSB8) -> "InjectionErrorModel":
        """Plain-text grid: header `n_vin n_vacc vmin vmax`, then row-major
        millivolt entries (one row of the vin sweep per line)."""
        with open(path) as fh:
            head = fh.readline().split()
            if len(head) != 4:
                raise UsageError("injection map header must be 'n_vin n_vacc vmin vmax'")
            n_vin, n_vacc = int(head[0]), int(head[1])
            vmin, vmax = float(head[2]), float(head[3])
            values = np.loadtxt(fh).reshape(n_vin, n_vacc) * 1e-3
        vin = np.linspace(vmin, vmax, n_vin)
        vacc = np.linspace(vmin, vmax, n_vacc)
        return cls.from_grid(vin, vacc, values, bound=bound)


@dataclass
class LeakageModel:
    """Accumulation-capacitor leakage drift over the bit-serial horizon.

    Cubic odd shape around the V_DDL midpoint; drift_at_rail is the total
    drift accumulated over the full 8b horizon when the node sits at a
    rail.  Negligible (< 0.05 LSB8) within +/-0.2 V of midpoint.
    """

    drift_at_rail: float = 1.0e-3
    horizon: float = 8 * 5.0e-9
    v_mid: float = 0.4
    v_rail_span: float = 0.4
    enabled: bool = True

    def drift(self, v: float, dt: float | None = None) -> float:
        if not self.enabled:
            return 0.0
        dt = self.horizon if dt is None else dt
        x = (v - self.v_mid) / self.v_rail_span
        return -self.drift_at_rail * x ** 3 * (dt / self.horizon)


@dataclass
class MbiwState:
    """Per-block state machine for the four MBIW phases."""

    params: ElectricalParams
    r_in: int
    r_w: int
    v_acc: float = None
    v_dpl: float = None
    phase: Phase = Phase.DP
    k: int = 0

    def __post_init__(self):
        if not 1 <= self.r_in <= 8:
            raise ConfigError(f"r_in must be in [1,8], got {self.r_in}")
        if not 1 <= self.r_w <= 4:
            raise ConfigError(f"r_w must be in [1,4], got {self.r_w}")
        if self.v_acc is None:
            self.v_acc = self.params.V_DDL
        if self.v_dpl is None:
            self.v_dpl = self.params.V_DDL

    def dp_result(self, v_dp: float) -> None:
        """Close the DP phase for bit k; the CS_DP gate opens and the
        accumulation gate may now close (non-overlap contract)."""
        if self.phase is not Phase.DP:
            raise SequencingError(f"dp_result in phase {self.phase}")
        self.v_dpl = float(v_dp)
        self.phase = Phase.ACCUMULATE_IN


def alpha_mb(params: ElectricalParams) -> float:
    """Multi-bit attenuation factor (C_mb+C_adc)/(C_acc+C_mb+C_adc)."""
    c_l = params.C_mb + params.C_adc
    return c_l / (params.C_acc + c_l)


def accumulate_input_bit(state: MbiwState, v_dp_k: float,
                         injection: InjectionErrorModel | None = None,
                         leakage: LeakageModel | None = None) -> MbiwState:
    """One AccumulateIn step: share C_acc with the DPL load holding v_dp_k.

    Raises SequencingError if the block is still in its DP phase: the
    CS_DP and ACC_in gates must never overlap.  For r_in = 1 the
    accumulation is bypassed entirely; the DP voltage is handed to the
    weight-accumulation stage unattenuated.
    """
    if state.phase is not Phase.ACCUMULATE_IN:
        raise SequencingError(f"accumulate_input_bit in phase {state.phase}")
    if state.k >= state.r_in:
        raise SequencingError("all input bits already accumulated")
    p = state.params
    if state.r_in == 1:
        state.v_acc = v_dp_k
    else:
        load = CapNode(p.C_mb + p.C_adc, v_dp_k, index=0)
        acc = CapNode(p.C_acc, state.v_acc, index=1)
        v = share([load, acc])
        if injection is not None:
            v += injection(v_dp_k, state.v_acc)
        if leakage is not None:
            v += leakage.drift(v, dt=leakage.horizon / max(state.r_in, 1))
        state.v_acc = v
    state.k += 1
    state.phase = Phase.DP if state.k < state.r_in else Phase.WEIGHT_SELF
    state.v_dpl = p.V_DDL  # DPL precharged for the next bit plane
    return state


def accumulate_input_closed_form(v_dp: np.ndarray, params: ElectricalParams) -> float:
    """Closed-form result of the bit-serial accumulation (oracle).

    v_dp holds the r_in per-bit DP voltages, LSB first.  The C_acc node
    starts precharged to V_DDL:
        V = (1-a)^r V_DDL + sum_k a (1-a)^(r-1-k) v_dp[k],  a = alpha_mb.
    For the ideal a = 1/2 this reduces to radix-2 input weighting.
    """
    a = alpha_mb(params)
    r = len(v_dp)
    if r == 1:
        return float(v_dp[0])
    v = (1 - a) ** r * params.V_DDL
    for k in range(r):
        v += a * (1 - a) ** (r - 1 - k) * v_dp[k]
    return float(v)


def accumulate_weights(block_v: np.ndarray, r_w: int, params: ElectricalParams,
                       cols_per_block: int = 4) -> tuple[float, float]:
    """Pairwise LSB-to-MSB weight-bit accumulation across one block.

    block_v holds the r_w per-column DPL voltages, LSB column first.  The
    LSB column is first self-weighted against the V_DDL-precharged
    accumulation node, then DPLs are shared by pairs up to the MSB.
    Returns (v_mbiw, common_mode): the physical result on the MSB DPL and
    the V_DDL common-mode term (1/2)^r_w * V_DDL that the ideal weighted
    sum of Eq-style oracles omits.
    """
    if r_w > cols_per_block:
        raise ConfigError(f"r_w {r_w} exceeds {cols_per_block} columns per block")
    if len(block_v) < r_w:
        raise UsageError("need one DPL voltage per weight bit")
    c_col = params.C_mb + params.C_adc
    acc = CapNode(params.C_acc, params.V_DDL, index=0)
    col0 = CapNode(c_col, float(block_v[0]), index=1)
    share([acc, col0])
    running = col0
    for k in range(1, r_w):
        nxt = CapNode(c_col, float(block_v[k]), index=k + 1)
        share([running, nxt])
        running = nxt
    common_mode = 0.5 ** r_w * params.V_DDL
    return running.voltage, common_mode


def weight_sum_closed_form(block_v: np.ndarray, r_w: int, v_ddl: float) -> float:
    """Ideal Eq-style weighted sum sum_k (1/2)^(r_w-k) V_k, plus the
    self-weighting common mode, for equal capacitances."""
    v = sum(0.5 ** (r_w - k) * block_v[k] for k in range(r_w))
    return float(v + 0.5 ** r_w * v_ddl)
