import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagine_sim.dparray import ElectricalParams
from imagine_sim.errors import ConfigError, SequencingError, UsageError
from imagine_sim.mbiw import (
    LSB8,
    InjectionErrorModel,
    LeakageModel,
    MbiwState,
    Phase,
    accumulate_input_bit,
    accumulate_input_closed_form,
    accumulate_weights,
    alpha_mb,
    weight_sum_closed_form,
)

ELEC = ElectricalParams()

volt_arrays = st.lists(st.floats(min_value=0.0, max_value=0.8),
                       min_size=1, max_size=8)


def _serial_accumulate(v_dp, params=ELEC):
    state = MbiwState(params=params, r_in=len(v_dp), r_w=1)
    for v in v_dp:
        state.dp_result(v)
        accumulate_input_bit(state, v)
    return state.v_acc


def test_alpha_mb_is_half_at_defaults():
    assert alpha_mb(ELEC) == 0.5


@given(volt_arrays)
@settings(max_examples=200, deadline=None)
def test_serial_accumulation_matches_closed_form(v_dp):
    got = _serial_accumulate(v_dp)
    want = accumulate_input_closed_form(np.array(v_dp), ELEC)
    assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_radix2_weighting_at_default_alpha():
    # with a = 1/2 each earlier bit is worth half of the next one
    v_dp = np.array([0.1, 0.3, 0.5, 0.7])
    r = len(v_dp)
    want = 0.5 ** r * ELEC.V_DDL + sum(
        0.5 ** (r - k) * v_dp[k] for k in range(r))
    assert _serial_accumulate(v_dp) == pytest.approx(want, rel=1e-12)


def test_unbalanced_capacitor_closed_form():
    elec = ElectricalParams(C_acc=25e-15)
    v_dp = [0.2, 0.6, 0.35]
    got = _serial_accumulate(v_dp, elec)
    want = accumulate_input_closed_form(np.array(v_dp), elec)
    assert got == pytest.approx(want, rel=1e-12)


def test_single_bit_input_bypasses_accumulation():
    state = MbiwState(params=ELEC, r_in=1, r_w=1)
    state.dp_result(0.6173)
    accumulate_input_bit(state, 0.6173)
    assert state.v_acc == 0.6173  # handed over unattenuated


def test_gate_sequencing_enforced():
    state = MbiwState(params=ELEC, r_in=2, r_w=1)
    with pytest.raises(SequencingError):
        accumulate_input_bit(state, 0.5)  # CS_DP gate still closed
    state.dp_result(0.5)
    with pytest.raises(SequencingError):
        state.dp_result(0.5)  # DP phase already closed
    accumulate_input_bit(state, 0.5)
    state.dp_result(0.4)
    accumulate_input_bit(state, 0.4)
    with pytest.raises(SequencingError):
        accumulate_input_bit(state, 0.4)  # all bits consumed
    with pytest.raises(ConfigError):
        MbiwState(params=ELEC, r_in=9, r_w=1)
    with pytest.raises(ConfigError):
        MbiwState(params=ELEC, r_in=1, r_w=5)


@given(st.lists(st.floats(min_value=0.0, max_value=0.8), min_size=4, max_size=4),
       st.integers(1, 4))
@settings(max_examples=200, deadline=None)
def test_weight_share_matches_weighted_sum(block_v, r_w):
    block_v = np.array(block_v)
    v, cm = accumulate_weights(block_v, r_w, ELEC)
    want = weight_sum_closed_form(block_v, r_w, ELEC.V_DDL)
    assert cm == 0.5 ** r_w * ELEC.V_DDL
    assert v == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_weight_share_argument_checks():
    with pytest.raises(ConfigError):
        accumulate_weights(np.zeros(5), 5, ELEC)
    with pytest.raises(UsageError):
        accumulate_weights(np.zeros(1), 2, ELEC)


def test_injection_surface_shape():
    inj = InjectionErrorModel()
    assert inj(0.4, 0.7) == 0.0  # zero along the mid-rail axes
    assert inj(0.7, 0.4) == 0.0
    assert abs(inj(0.8, 0.8)) <= inj.bound
    assert inj(0.8, 0.8) == -inj(0.0, 0.8)  # odd in v_in
    assert inj(0.8, 0.8) == -inj(0.8, 0.0)  # odd in v_acc
    assert InjectionErrorModel(enabled=False)(0.8, 0.8) == 0.0


def test_injection_grid_interpolation():
    vin = np.linspace(0.0, 0.8, 5)
    vacc = np.linspace(0.0, 0.8, 5)
    err = np.outer(vin - 0.4, vacc - 0.4) * 1e-2
    inj = InjectionErrorModel.from_grid(vin, vacc, err)
    assert inj(0.4, 0.4) == pytest.approx(0.0, abs=1e-12)
    assert inj(0.8, 0.8) == pytest.approx(err[-1, -1], rel=1e-9)
    mid = inj(0.5, 0.5)  # interior point, bilinear
    assert abs(mid) < abs(err[-1, -1])
    with pytest.raises(UsageError):
        InjectionErrorModel.from_grid(vin, vacc, err * 1e3)


def test_leakage_cubic_and_negligible_near_mid():
    leak = LeakageModel()
    assert leak.drift(0.4) == 0.0
    assert leak.drift(0.8) == -leak.drift(0.0)
    assert abs(leak.drift(0.8)) == pytest.approx(1e-3, rel=1e-12)
    assert abs(leak.drift(0.6)) < 0.05 * LSB8
    half = leak.drift(0.8, dt=leak.horizon / 2)
    assert half == pytest.approx(leak.drift(0.8) / 2, rel=1e-12)
    assert LeakageModel(enabled=False).drift(0.8) == 0.0
