"""Distribution-shaping charge-injection SAR ADC.

Behavioral (closed-form) and structural (per-cycle) models of the
column ADC: batch-norm offset injection, sense-amp offset calibration
injection, voltage-split SAR conversion with in-conversion gain zoom
through a grid-quantized reference ladder, and the offset-calibration
binary search.

Quantizer convention: the pre-floor argument is snapped to the nearest
integer when within QUANT_SNAP_TOL of it, then floored.  The exact
integer oracle implements the same contract in rational arithmetic, so
"exact equivalence" between the float and rational paths is decidable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chargecore import make_stream
from .errors import ConfigError, UsageError

SUPPORTED_GAMMAS = (1, 2, 4, 8, 16, 32)

#: tolerance of the floor quantizer around exact code boundaries
QUANT_SNAP_TOL = 1e-9

#: ABN offset step: +/-30 mV full range over a 5b signed code
BETA_STEP = 0.06 / 31.0
BETA_CODE_MIN, BETA_CODE_MAX = -15, 15


@dataclass(frozen=True)
class AdcConfig:
    r_out: int = 8
    gamma: int = 1
    n_msb_caps: int = 5
    n_lsb_cells: int = 2
    C_c: float = 0.7e-15
    C_p_sar: float = 2.9e-15
    ladder_mismatch_sigma: float = 0.01
    V_DDL: float = 0.4
    V_DDH: float = 0.8
    v_ref_mid: float = None  # reference for the delta-V terms; defaults to V_DDL

    def __post_init__(self):
        if not 1 <= self.r_out <= 8:
            raise ConfigError(f"r_out must be in [1,8], got {self.r_out}")
        if self.gamma not in SUPPORTED_GAMMAS:
            raise ConfigError(f"gamma {self.gamma} not in {SUPPORTED_GAMMAS}")
        if self.v_ref_mid is None:
            object.__setattr__(self, "v_ref_mid", self.V_DDL)

    @property
    def C_sar(self) -> float:
        # 5 binary-weighted MSB caps (16..1) plus 2 unit LSB cells = 33 units
        return (2 ** self.n_msb_caps - 1 + self.n_lsb_cells) * self.C_c

    @property
    def alpha_adc(self) -> float:
        return self.C_sar / (self.C_sar + self.C_p_sar)

    @property
    def ladder_step(self) -> float:
        return self.V_DDH / 32.0

    @property
    def lsb_volts(self) -> float:
        """Input-referred volts per output code at this gain."""
        return self.alpha_adc * self.V_DDH / (2 ** (self.r_out - 1)) / self.gamma

    @property
    def extrapolated(self) -> bool:
        """Gains above the MSB-DAC maximum of 16 extend the grid model
        beyond what the reference ladder specification covers."""
        return self.gamma > 16

    def bit_cap(self, k: int) -> float:
        """Capacitance switching for output bit k (0 = LSB).

        The bottom min(3, r_out - n_msb) bits reuse the unit LSB cells
        with downscaled swing; upper bits use binary-weighted MSB caps.
        """
        lsb_bits = max(self.r_out - self.n_msb_caps, 0)
        if k < lsb_bits:
            return self.C_c
        return 2 ** (k - lsb_bits) * self.C_c


@dataclass
class AbnParams:
    """Per-column analog batch-norm offset; gain is shared in AdcConfig."""

    beta_code: int = 0
    beta_step: float = BETA_STEP

    def __post_init__(self):
        if not BETA_CODE_MIN <= self.beta_code <= BETA_CODE_MAX:
            raise ConfigError(f"beta code {self.beta_code} outside 5b signed range")

    @property
    def delta_v(self) -> float:
        return self.beta_code * self.beta_step


@dataclass
class SenseAmp:
    """StrongArm comparator non-idealities for one column."""

    offset: float = 0.0
    sigma_prelayout: float = 0.020
    postlayout_factor: float = 1.75
    kickback: float = 0.0
    decision_noise_sigma: float = 0.0

    @property
    def sigma_postlayout(self) -> float:
        return self.sigma_prelayout * self.postlayout_factor

    @classmethod
    def draw(cls, n_cols: int, seed: int, stream: int = 7,
             postlayout: bool = True, **kw) -> list["SenseAmp"]:
        rng = make_stream(seed, stream)
        proto = cls(**kw)
        sigma = proto.sigma_postlayout if postlayout else proto.sigma_prelayout
        offs = rng.normal(0.0, sigma, size=n_cols)
        return [cls(offset=float(o), **kw) for o in offs]


@dataclass
class CalUnit:
    """7b SA-offset calibration bank.

    The code spans +/- span_half around mid-code 64.  With the default
    +/-60 mV span (the 3-sigma pre-layout SA offset each side) the step
    is 0.9375 mV, so the binary search lands within 0.47 mV of any
    in-range offset.
    """

    code: int = 64
    span_half: float = 0.060
    out_of_range: bool = False

    @property
    def step(self) -> float:
        return 2.0 * self.span_half / 128.0

    @property
    def delta_v(self) -> float:
        return (self.code - 64) * self.step


# --- reference ladder -------------------------------------------------------


class ReferenceLadder:
    """32-segment resistive ladder shared by all columns.

    Main taps sit at multiples of V_DDH/32; the supported gain settings
    land exactly on these taps (gamma = 1 puts every MSB cap on the
    supply rail itself).  The two LSB cells are served by a split
    segment divided a further 32 times, giving a V_DDH/1024 fine grid
    modeled by interpolating the main walk.  Per-segment resistor
    mismatch (relative sigma, correlated random walk) perturbs interior
    taps while both rails stay exact.
    """

    N_SEG = 32
    FINE_DIV = 32

    def __init__(self, cfg: AdcConfig, seed: int = 0, mismatch: bool = False):
        self.cfg = cfg
        if mismatch and cfg.ladder_mismatch_sigma > 0:
            rng = make_stream(seed, 11)
            seg = 1.0 + rng.normal(0.0, cfg.ladder_mismatch_sigma, size=self.N_SEG)
        else:
            seg = np.ones(self.N_SEG)
        self._taps = (np.concatenate([[0.0], np.cumsum(seg)]) / seg.sum()
                      * cfg.V_DDH)

    def tap(self, m: int) -> float:
        """Absolute voltage of main tap m in [0, 32] (clipped)."""
        m = int(np.clip(m, 0, self.N_SEG))
        return float(self._taps[m])

    def fine(self, m: int) -> float:
        """Absolute voltage of split-segment tap m (grid V_DDH/1024)."""
        p = np.clip(m / self.FINE_DIV, 0.0, float(self.N_SEG))
        lo = int(np.floor(p))
        hi = min(lo + 1, self.N_SEG)
        f = p - lo
        return float((1.0 - f) * self._taps[lo] + f * self._taps[hi])

    def deviation(self, m: int) -> float:
        """Main-tap deviation from its nominal multiple of V_DDH/32."""
        m = int(np.clip(m, 0, self.N_SEG))
        return float(self._taps[m] - m * self.cfg.V_DDH / self.N_SEG)


def _requested_taps(cfg: AdcConfig) -> list:
    """(is_fine, tap_index) request per output bit (index 0 = LSB).

    MSB-group caps all switch by V_DDH/gamma (binary weighting comes
    from the cap sizes); the unit LSB cells switch by successive halves
    of that on the fine grid.
    """
    g = max(cfg.r_out - cfg.n_msb_caps, 0)
    reqs = []
    for k in range(cfg.r_out):
        if k >= g:
            reqs.append((False, int(round(ReferenceLadder.N_SEG / cfg.gamma))))
        else:
            fine_full = ReferenceLadder.N_SEG * ReferenceLadder.FINE_DIV
            reqs.append((True, int(round(fine_full / (cfg.gamma * 2 ** (g - k))))))
    return reqs


def ladder_levels(cfg: AdcConfig, ladder: ReferenceLadder | None = None) -> np.ndarray:
    """S-IN / S-INb absolute levels per output bit, shape (r_out, 2)."""
    if ladder is None:
        ladder = ReferenceLadder(cfg)
    mid = cfg.V_DDH / 2.0
    out = np.empty((cfg.r_out, 2))
    for k, (is_fine, m) in enumerate(_requested_taps(cfg)):
        w = ladder.fine(m) if is_fine else ladder.tap(m)
        out[k] = (mid + w / 2.0, mid - w / 2.0)
    return out


def _ideal_step(cfg: AdcConfig, k: int) -> float:
    """Ideal input-referred residue update after deciding bit k."""
    u = cfg.lsb_volts
    return u * 2.0 ** (k - 1)


def effective_steps(cfg: AdcConfig, ladder: ReferenceLadder | None = None,
                    quantized: bool = True) -> np.ndarray:
    """DPL-referred residue steps per bit (index 0 = LSB).

    quantized=False returns the exact ideal steps (structural mode then
    matches the behavioral transfer bit for bit).  quantized=True routes
    each bit's swing through its ladder tap: exact for the supported
    gain settings with an ideal ladder, perturbed under mismatch (the
    perturbation grows with gamma as the taps move off the rails).
    """
    steps = np.empty(cfg.r_out)
    if not quantized:
        for k in range(cfg.r_out):
            steps[k] = _ideal_step(cfg, k)
        return steps
    if ladder is None:
        ladder = ReferenceLadder(cfg)
    d = 2 ** min(cfg.r_out, cfg.n_msb_caps)   # switched-array units
    for k, (is_fine, m) in enumerate(_requested_taps(cfg)):
        w = ladder.fine(m) if is_fine else ladder.tap(m)
        units = cfg.bit_cap(k) / cfg.C_c
        steps[k] = (units / d) * cfg.alpha_adc * w
    return steps


# --- conversion -------------------------------------------------------------


def snap_floor(arg):
    """Floor with the documented boundary tolerance (vectorized)."""
    arg = np.asarray(arg, dtype=np.float64)
    near = np.rint(arg)
    snapped = np.where(np.abs(arg - near) < QUANT_SNAP_TOL, near, np.floor(arg))
    return snapped.astype(np.int64)


def prefloor_argument(v_mbiw, abn: AbnParams | None, cal: CalUnit | None,
                      cfg: AdcConfig):
    dv = np.asarray(v_mbiw, dtype=np.float64) - cfg.v_ref_mid
    if abn is not None:
        dv = dv + abn.delta_v
    if cal is not None:
        dv = dv + cal.delta_v
    half = 2.0 ** (cfg.r_out - 1)
    return half + cfg.gamma * dv / (cfg.alpha_adc * cfg.V_DDH / half)


def convert_behavioral(v_mbiw, abn: AbnParams | None, cal: CalUnit | None,
                       cfg: AdcConfig):
    """Closed-form ADC code, saturated to [0, 2^r_out - 1]."""
    arg = prefloor_argument(v_mbiw, abn, cal, cfg)
    code = snap_floor(arg)
    code = np.clip(code, 0, 2 ** cfg.r_out - 1)
    return int(code) if code.ndim == 0 else code


def convert_structural(v_dpl, abn: AbnParams | None, cal: CalUnit | None,
                       cfg: AdcConfig, sa: SenseAmp | None = None,
                       ladder: ReferenceLadder | None = None,
                       quantized: bool = False,
                       noise_rng: np.random.Generator | None = None):
    """Bit-serial SAR conversion: r_out decide/update cycles per sample.

    Returns (codes, residues); residues has one row per sample and one
    column per SAR cycle (DPL voltage after each residue update).
    Matches convert_behavioral exactly when quantization, ladder
    mismatch, SA offset and noise are all disabled.
    """
    v = np.atleast_1d(np.asarray(v_dpl, dtype=np.float64))
    dv = v - cfg.v_ref_mid
    if abn is not None:
        dv = dv + abn.delta_v
    if cal is not None:
        dv = dv + cal.delta_v
    steps = effective_steps(cfg, ladder, quantized=quantized)
    sa_off = sa.offset if sa is not None else 0.0
    kick = sa.kickback if sa is not None else 0.0
    r = cfg.r_out
    if noise_rng is not None and sa is not None and sa.decision_noise_sigma > 0:
        noise = noise_rng.normal(0.0, sa.decision_noise_sigma, size=(v.size, r))
    else:
        noise = np.zeros((v.size, r))
    codes, residues = _kernels.sar_convert(dv, steps, sa_off + kick, noise,
                                           QUANT_SNAP_TOL)
    if np.isscalar(v_dpl):
        return int(codes[0]), residues[0]
    return codes, residues


def adc_inl(cfg: AdcConfig, ladder: ReferenceLadder | None = None,
            quantized: bool = True) -> dict:
    """Static nonlinearity of the SAR transfer at its ideal code centers.

    Converts the input at the center of every ideal code bin and
    measures the deviation of the resulting codes from their
    least-squares line (removing gain/offset error, standard converter
    practice).  Returns per-code INL plus the mean-|INL| and peak
    figures, all in LSB at the configured gain.
    """
    n = 2 ** cfg.r_out
    half = n // 2
    codes_axis = np.arange(n)
    dv = (codes_axis + 0.5 - half) * cfg.lsb_volts
    codes, _ = convert_structural(dv + cfg.v_ref_mid, None, None, cfg,
                                  ladder=ladder, quantized=quantized)
    codes = codes.astype(np.float64)
    slope, intercept = np.polyfit(codes_axis, codes, 1)
    inl = codes - (slope * codes_axis + intercept)
    return {"inl": inl, "mean_abs": float(np.mean(np.abs(inl))),
            "peak": float(np.max(np.abs(inl)))}


def calibrate(sa: SenseAmp, cfg: AdcConfig, cal: CalUnit | None = None,
              noise_rng: np.random.Generator | None = None) -> CalUnit:
    """7-cycle SAR binary search cancelling the SA input offset.

    The DPL sits precharged at the mid reference, so each decision sees
    only the candidate calibration injection plus the SA offset (and
    decision noise when enabled).  The comparison carries a half-step
    bias so the search rounds to the nearest code.  Out-of-range offsets
    clamp at the extreme codes and set the out_of_range flag.
    """
    cal = cal if cal is not None else CalUnit()
    step = cal.step
    code = 0
    for j in range(6, -1, -1):
        trial = code | (1 << j)
        v = (trial - 64) * step + sa.offset
        if noise_rng is not None and sa.decision_noise_sigma > 0:
            v += noise_rng.normal(0.0, sa.decision_noise_sigma)
        if v <= step / 2.0:
            code = trial
    residual = (code - 64) * step + sa.offset
    flagged = abs(residual) > step
    return CalUnit(code=code, span_half=cal.span_half, out_of_range=bool(flagged))


# --- output register contract ----------------------------------------------


class OutputRegister:
    """Double-buffered column output register (master/slave latches).

    Writes land in the master latch; reads return the slave latch, which
    only changes on an explicit commit() pulse.
    """

    def __init__(self, n_cols: int):
        self._master = np.zeros(n_cols, dtype=np.int64)
        self._slave = np.zeros(n_cols, dtype=np.int64)

    def write(self, codes: np.ndarray) -> None:
        self._master[:] = codes

    def commit(self) -> None:
        self._slave[:] = self._master

    def read(self) -> np.ndarray:
        return self._slave.copy()


# --- calibration dump/restore ------------------------------------------------


def dump_cal_codes(cals: list[CalUnit]) -> str:
    """Text dump, one 'col,code,flag' line per column."""
    return "".join(f"{i},{c.code},{int(c.out_of_range)}\n" for i, c in enumerate(cals))


def load_cal_codes(text: str, span_half: float = 0.060) -> list[CalUnit]:
    cals = []
    for line in text.strip().splitlines():
        col, code, flag = line.split(",")
        if int(col) != len(cals):
            raise UsageError("calibration dump columns out of order")
        cals.append(CalUnit(code=int(code), span_half=span_half,
                            out_of_range=bool(int(flag))))
    return cals
