"""Hardware datasheet constants and the exact integer code transfer.

The accelerator's column converts an integer cross-correlation sum S
into an output code through a fixed analog chain; this module evaluates
that chain both as floats (for training) and in exact rational
arithmetic (for the bit-true integer simulator).  The constants below
mirror the published macro datasheet defaults; they must be reproduced
as the *same binary64 expressions* the silicon model uses, because the
integer simulator promotes their float values to exact rationals.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

# --- macro datasheet -------------------------------------------------------

C_C = 0.7e-15                 # coupling cap per bitcell
C_P_PER_UNIT = 2.0e-15        # local column-wire parasitic per 36-row unit
C_MB = 14.0e-15               # multi-bit accumulation load
C_ADC = 26.0e-15              # converter sampling load
C_P_SAR = 2.9e-15             # converter top-plate parasitic
SAR_UNITS = 2 ** 5 - 1 + 2    # 31 binary-weighted + 2 LSB unit caps
V_DDL = 0.4
V_DDH = 0.8
ROWS_PER_UNIT = 36
MAX_ROWS = 1152
BETA_STEP = 0.06 / 31.0       # per-code offset of the 5b bias bank
SNAP_TOL = Fraction(1, 10 ** 9)
SUPPORTED_GAMMAS = (1, 2, 4, 8, 16, 32)


def connected_units(rows: int) -> int:
    return math.ceil(rows / ROWS_PER_UNIT)


def alpha_column(rows: int) -> float:
    """Charge-injection attenuation of a column serving `rows` rows.

    The runtime leaves only ceil(rows/36) serially-split units on the
    line, so the attenuation depends on the layer height alone.
    """
    units = connected_units(rows)
    n_dp = units * ROWS_PER_UNIT
    c_p = units * C_P_PER_UNIT
    return C_C / (n_dp * C_C + c_p + (C_MB + C_ADC))


def alpha_converter() -> float:
    c_sar = SAR_UNITS * C_C
    return c_sar / (c_sar + C_P_SAR)


def code_gain(rows: int, r_in: int, r_w: int, r_out: int,
              gamma: int) -> float:
    """Float slope of code vs integer sum S (before floor and clip)."""
    half = 2 ** (r_out - 1)
    denom_in = 2 ** r_in if r_in > 1 else 1
    return (gamma * alpha_column(rows) * V_DDL * half
            / (denom_in * 2 ** r_w * alpha_converter() * V_DDH))


def beta_gain(r_out: int, gamma: int) -> float:
    """Float code offset per unit of the 5b bias code."""
    half = 2 ** (r_out - 1)
    return gamma * BETA_STEP * half / (alpha_converter() * V_DDH)


def code_thresholds(rows: int, r_in: int, r_w: int, r_out: int,
                    gamma: int, beta: int) -> np.ndarray:
    """Exact integer-sum thresholds of every output-code step.

    The chain maps S to arg = half + A*S + B with exact rationals A, B
    and floors with a snap band of SNAP_TOL around integers.  Returns
    T[0..2^r_out - 1] such that code(S) = number of thresholds <= S;
    searchsorted against these reproduces the silicon integer oracle
    bit for bit.
    """
    a = Fraction(alpha_column(rows))
    a_adc = Fraction(alpha_converter())
    half = 2 ** (r_out - 1)
    denom_in = 2 ** r_in if r_in > 1 else 1
    A = (gamma * a * Fraction(V_DDL) * half
         / (denom_in * 2 ** r_w * a_adc * Fraction(V_DDH)))
    B = half + gamma * beta * Fraction(BETA_STEP) * half \
        / (a_adc * Fraction(V_DDH))
    # code >= n  <=>  arg > n - tol  <=>  S > (n - tol - B) / A
    out = np.empty(2 ** r_out, dtype=np.int64)
    for n in range(1, 2 ** r_out):
        limit = (n - SNAP_TOL - B) / A
        out[n] = limit.numerator // limit.denominator + 1
    out[0] = np.iinfo(np.int64).min   # code >= 0 always
    return out[1:]


def codes_from_sums(S: np.ndarray, rows: int, r_in: int, r_w: int,
                    r_out: int, gamma: int,
                    beta: np.ndarray | None = None) -> np.ndarray:
    """Vectorized exact code conversion of an (N, C_out) integer-sum array."""
    S = np.asarray(S, dtype=np.int64)
    if beta is None:
        beta = np.zeros(S.shape[-1], dtype=np.int64)
    codes = np.empty_like(S)
    for b in np.unique(beta):
        cols = np.flatnonzero(beta == b)
        thr = code_thresholds(rows, r_in, r_w, r_out, gamma, int(b))
        codes[..., cols] = np.searchsorted(thr, S[..., cols], side="right")
    return codes


# --- characterization spec ---------------------------------------------------


@dataclass
class HwNoiseSpec:
    """Measured output-noise envelope of the macro, as characterized.

    rms_lsb maps conversion gain to the worst per-column code RMS in
    LSB; the remaining fields bound deterministic settling error,
    charge-injection error and the post-calibration comparator spread.
    """

    rms_lsb: dict = field(default_factory=lambda: {1: 0.5})
    inl_bound_lsb: float = 0.0
    injection_bound_v: float = 0.0
    sa_residual_sigma_lsb8: float = 0.0
    cal_success_rate: float = 1.0

    def __post_init__(self):
        gams = sorted(self.rms_lsb)
        vals = [self.rms_lsb[g] for g in gams]
        if any(v < 0 for v in vals) or self.inl_bound_lsb < 0 \
                or self.sa_residual_sigma_lsb8 < 0:
            raise ValueError("noise spec fields must be non-negative")
        if any(b < a - 1e-9 for a, b in zip(vals, vals[1:])):
            raise ValueError("RMS curve must be monotone in gain")

    @classmethod
    def from_csv(cls, path) -> "HwNoiseSpec":
        rows = {}
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].startswith("#") or rec[0] == "key":
                    continue
                rows[rec[0]] = float(rec[1])
        rms = {int(k.split("_g")[1]): v for k, v in rows.items()
               if k.startswith("rms_lsb_g")}
        if not rms:
            raise ValueError(f"{path}: no rms_lsb_g<gamma> rows")
        return cls(rms_lsb=rms,
                   inl_bound_lsb=rows.get("inl_bound_lsb", 0.0),
                   injection_bound_v=rows.get("injection_bound_v", 0.0),
                   sa_residual_sigma_lsb8=rows.get("sa_residual_sigma_lsb8",
                                                   0.0),
                   cal_success_rate=rows.get("cal_success_rate", 1.0))

    def rms_for(self, gamma: int) -> float:
        """Code RMS at a given gain, log-interpolated between samples."""
        gams = sorted(self.rms_lsb)
        if gamma <= gams[0]:
            return self.rms_lsb[gams[0]]
        if gamma >= gams[-1]:
            return self.rms_lsb[gams[-1]]
        for lo, hi in zip(gams, gams[1:]):
            if lo <= gamma <= hi:
                t = (math.log2(gamma) - math.log2(lo)) \
                    / (math.log2(hi) - math.log2(lo))
                return (1 - t) * self.rms_lsb[lo] + t * self.rms_lsb[hi]
        raise AssertionError

    def train_sigma(self, gamma: int) -> float:
        """Total per-code training noise: random RMS plus the residual
        comparator spread, in quadrature."""
        return math.hypot(self.rms_for(gamma), self.sa_residual_sigma_lsb8)
