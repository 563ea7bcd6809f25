import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagine_sim.adc import (
    QUANT_SNAP_TOL,
    AbnParams,
    AdcConfig,
    CalUnit,
    OutputRegister,
    ReferenceLadder,
    SenseAmp,
    adc_inl,
    calibrate,
    convert_behavioral,
    convert_structural,
    dump_cal_codes,
    effective_steps,
    load_cal_codes,
    snap_floor,
)
from imagine_sim.errors import ConfigError

CFG = AdcConfig()


def test_config_ranges():
    with pytest.raises(ConfigError):
        AdcConfig(r_out=9)
    with pytest.raises(ConfigError):
        AdcConfig(gamma=3)
    assert AdcConfig(gamma=32).extrapolated
    assert not AdcConfig(gamma=16).extrapolated


def test_sar_bank_values():
    # 31 binary-weighted units + 2 LSB cells of 0.7 fF
    assert CFG.C_sar == pytest.approx(33 * 0.7e-15, rel=1e-12)
    assert CFG.alpha_adc == pytest.approx(
        CFG.C_sar / (CFG.C_sar + 2.9e-15), rel=1e-12)


def test_snap_floor_tolerance():
    assert snap_floor(4.999999999999) == 5      # within the snap band
    assert snap_floor(5.000000000001) == 5
    assert snap_floor(4.9999) == 4              # a genuine fraction floors
    assert snap_floor(-0.3) == -1
    got = snap_floor(np.array([1.5, 2.0 - QUANT_SNAP_TOL / 2, 2.0]))
    assert np.array_equal(got, [1, 2, 2])


def test_structural_equals_behavioral_exhaustively():
    # one input per ideal code bin center, plus the exact bin edges
    half = 2 ** (CFG.r_out - 1)
    lsb = CFG.lsb_volts
    centers = (np.arange(2 ** CFG.r_out) + 0.5 - half) * lsb + CFG.v_ref_mid
    edges = (np.arange(2 ** CFG.r_out) - half) * lsb + CFG.v_ref_mid
    for v in (centers, edges):
        codes_s, _ = convert_structural(v, None, None, CFG)
        codes_b = convert_behavioral(v, None, None, CFG)
        assert np.array_equal(codes_s, codes_b)


def test_structural_monotone():
    v = CFG.v_ref_mid + np.linspace(-0.5, 0.5, 4001) * CFG.alpha_adc * CFG.V_DDH
    codes, _ = convert_structural(v, None, None, CFG)
    assert np.all(np.diff(codes) >= 0)


@pytest.mark.parametrize("gamma", [1, 2, 4, 8, 16, 32])
def test_supported_gains_land_on_ladder_grid(gamma):
    cfg = AdcConfig(gamma=gamma)
    ideal = effective_steps(cfg, quantized=False)
    grid = effective_steps(cfg, ReferenceLadder(cfg, mismatch=False),
                           quantized=True)
    assert np.allclose(grid, ideal, rtol=1e-12, atol=0.0)


def test_prefloor_gain_doubles_exactly():
    # the gain term is a power-of-two scaling, exact in binary64
    dv = 3.7e-3
    half = 2 ** (CFG.r_out - 1)
    prev = None
    for gamma in (1, 2, 4, 8, 16, 32):
        swing = gamma * dv / (CFG.alpha_adc * CFG.V_DDH / half)
        if prev is not None:
            assert swing == 2.0 * prev
        prev = swing


def test_abn_offset_moves_codes():
    v = CFG.v_ref_mid
    assert convert_behavioral(v, AbnParams(beta_code=4), None, CFG) \
        > convert_behavioral(v, AbnParams(beta_code=-4), None, CFG)
    with pytest.raises(ConfigError):
        AbnParams(beta_code=16)
    with pytest.raises(ConfigError):
        AbnParams(beta_code=-17)


def test_ladder_mismatch_perturbs_but_pins_rails():
    cfg = AdcConfig(gamma=8)
    lad = ReferenceLadder(cfg, seed=11, mismatch=True)
    assert lad.tap(0) == 0.0
    assert lad.tap(32) == pytest.approx(cfg.V_DDH, rel=1e-12)
    devs = np.array([lad.deviation(m) for m in range(1, 32)])
    assert np.any(devs != 0.0)
    ideal = ReferenceLadder(cfg, seed=11, mismatch=False)
    assert all(ideal.deviation(m) == 0.0 for m in range(33))


def test_inl_grows_with_gain():
    means = []
    for gamma in (1, 8, 32):
        cfg = AdcConfig(gamma=gamma)
        lad = ReferenceLadder(cfg, seed=3, mismatch=True)
        means.append(adc_inl(cfg, lad)["mean_abs"])
    assert means[0] <= means[1] <= means[2]


# --- sense-amp offset calibration -------------------------------------------


def test_calibration_cancels_in_range_offsets():
    cal0 = CalUnit()
    for off in np.linspace(-0.058, 0.058, 41):
        cal = calibrate(SenseAmp(offset=float(off)), CFG)
        residual = cal.delta_v + off
        assert not cal.out_of_range
        assert abs(residual) <= 0.47e-3


def test_calibration_flags_out_of_range():
    cal = calibrate(SenseAmp(offset=0.075), CFG)
    assert cal.out_of_range
    assert cal.code in (0, 127)


def test_calibration_code_geometry():
    cal = CalUnit()
    assert cal.step == pytest.approx(0.060 / 64, rel=1e-12)
    assert CalUnit(code=64).delta_v == 0.0
    assert CalUnit(code=0).delta_v == pytest.approx(-0.060, rel=1e-12)


def test_sa_offset_statistics():
    amps = SenseAmp.draw(20000, seed=5, postlayout=True)
    offs = np.array([a.offset for a in amps])
    assert np.std(offs) == pytest.approx(0.020 * 1.75, rel=0.03)
    pre = SenseAmp.draw(20000, seed=5, postlayout=False)
    assert np.std([a.offset for a in pre]) == pytest.approx(0.020, rel=0.03)


def test_cal_code_dump_roundtrip():
    cals = [calibrate(SenseAmp(offset=o), CFG) for o in (-0.03, 0.0, 0.05, 0.08)]
    text = dump_cal_codes(cals)
    back = load_cal_codes(text)
    assert [c.code for c in back] == [c.code for c in cals]
    assert [c.out_of_range for c in back] == [c.out_of_range for c in cals]
    for line in text.strip().splitlines():
        col, code, flag = line.split(",")
        assert 0 <= int(code) < 128 and flag in ("0", "1")


# --- output register ---------------------------------------------------------


def test_output_register_double_buffering():
    reg = OutputRegister(4)
    reg.write(np.array([1, 2, 3, 4]))
    assert np.array_equal(reg.read(), np.zeros(4))  # not yet committed
    reg.commit()
    assert np.array_equal(reg.read(), [1, 2, 3, 4])
    reg.write(np.array([9, 9, 9, 9]))
    assert np.array_equal(reg.read(), [1, 2, 3, 4])


@given(st.floats(min_value=-0.012, max_value=0.012))
@settings(max_examples=100, deadline=None)
def test_behavioral_code_matches_direct_formula(dv):
    arg = 2 ** (CFG.r_out - 1) + CFG.gamma * dv / (
        CFG.alpha_adc * CFG.V_DDH / 2 ** (CFG.r_out - 1))
    want = int(np.clip(snap_floor(arg), 0, 2 ** CFG.r_out - 1))
    assert convert_behavioral(CFG.v_ref_mid + dv, None, None, CFG) == want
