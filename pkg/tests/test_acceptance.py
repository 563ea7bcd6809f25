"""Acceptance gate: the headline guarantees of the simulator.

Each test prints a single `criterion N: PASS/FAIL` line (visible with
`pytest -s` or in captured output on failure) plus the measured figure.
"""

import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from imagine_sim.adc import (
    AbnParams,
    AdcConfig,
    ReferenceLadder,
    convert_behavioral,
    convert_structural,
    effective_steps,
)
from imagine_sim.chargecore import K_B
from imagine_sim.dataflow import (
    LayerConfig,
    PipelineConfig,
    cycles_per_output,
    out_hw,
    predict_cycles,
    simulate_layer,
    stall_cycles,
)
from imagine_sim.dparray import (
    DplTopology,
    ElectricalParams,
    Topology,
    alpha_eff,
    dp_drive_energy,
    max_swing,
)
from imagine_sim.engine import (
    CimCycleInput,
    MacroConfig,
    NonidealityConfig,
    characterize_calibration,
    characterize_rms,
    characterize_transfer,
    integer_oracle,
    run_cycle,
)
from imagine_sim.mbiw import (
    MbiwState,
    accumulate_input_bit,
    accumulate_input_closed_form,
    accumulate_weights,
    weight_sum_closed_form,
)


@contextmanager
def criterion(n: int, what: str):
    try:
        yield
    except Exception:
        print(f"criterion {n}: FAIL  ({what})")
        raise
    print(f"criterion {n}: PASS  ({what})")


SMALL = MacroConfig(topo=DplTopology(Topology.SERIAL_SPLIT, 2))


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(2024)
    ideal = NonidealityConfig.ideal()
    t0 = time.monotonic()
    with criterion(1, "ideal engine == integer oracle, 10,000 instances"):
        for _ in range(10_000):
            r_in = int(rng.integers(1, 9))
            r_w = int(rng.choice([1, 2, 4]))
            r_out = int(rng.integers(1, 9))
            rows = int(rng.integers(1, 73))
            n_out = int(rng.integers(1, 5))
            cyc = CimCycleInput(
                inputs=rng.integers(0, 2 ** r_in, size=rows),
                weights=rng.integers(0, 2 ** r_w, size=(rows, n_out)),
                r_in=r_in, r_w=r_w)
            gamma = int(rng.choice([1, 2, 4, 8, 16, 32]))
            macro = SMALL.with_gamma(gamma, r_out)
            got = run_cycle(cyc, macro, ideal).codes
            want, _ = integer_oracle(cyc, macro)
            assert np.array_equal(got, want), (r_in, r_w, r_out, rows)
        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
    print(f"  10,000/10,000 exact in {elapsed:.1f}s")


def test_criterion_2_serial_and_weight_accumulation():
    rng = np.random.default_rng(7)
    p = ElectricalParams()
    with criterion(2, "bit-serial and weight-share charge math to 1e-12"):
        for r_in in range(1, 9):
            for _ in range(20):
                v_dp = rng.uniform(0.0, 0.8, size=r_in)
                st = MbiwState(params=p, r_in=r_in, r_w=1)
                for k in range(r_in):
                    st.dp_result(v_dp[k])
                    accumulate_input_bit(st, v_dp[k])
                want = accumulate_input_closed_form(v_dp, p)
                assert abs(st.v_acc - want) <= 1e-12 * max(abs(want), 1.0)
        for r_w in (1, 2, 4):
            for _ in range(50):
                block = rng.uniform(0.0, 0.8, size=4)
                got, _cm = accumulate_weights(block, r_w, p)
                want = weight_sum_closed_form(block, r_w, p.V_DDL)
                assert abs(got - want) <= 1e-12 * max(abs(want), 1.0)


def test_criterion_3_thermal_noise_sigma():
    from imagine_sim.chargecore import CapNode, NoiseSource
    node = CapNode(0.7e-15, 0.4)
    src = NoiseSource(kind="thermal-kTC", sigma_or_temp=300.0, seed=5)
    with criterion(3, "kT/C sigma at 0.7 fF, 300 K"):
        sigma = np.sqrt(K_B * 300.0 / 0.7e-15)
        assert src.sigma_for(node) == pytest.approx(sigma, rel=1e-12)
        draws = np.asarray(src.sample(node, size=1_000_000))
        measured = float(np.std(draws))
        assert abs(measured - 2.4e-3) <= 0.02 * 2.4e-3, measured
        assert sigma == pytest.approx(2.43e-3, rel=0.01)
    print(f"  measured std {measured * 1e3:.3f} mV")


def test_criterion_4_swing_adaptivity():
    p = ElectricalParams()
    base = DplTopology(Topology.BASELINE)
    one = DplTopology(Topology.SERIAL_SPLIT, 1)
    with criterion(4, "split-DPL attenuation-factor restoration"):
        ratio = alpha_eff(p, one) / alpha_eff(p, base)
        assert ratio >= 10.0, ratio
        p_hvy = replace(p, C_p_per_unit=40e-15)
        ratio20 = alpha_eff(p_hvy, one) / alpha_eff(p_hvy, base)
        assert 18.0 <= ratio20 <= 22.0, ratio20
        for units in range(1, 33):
            n_on = units * 36
            s = max_swing(p, DplTopology(Topology.SERIAL_SPLIT, units), n_on)
            q = max_swing(p, DplTopology(Topology.PARALLEL_SPLIT, units), n_on)
            b = max_swing(p, DplTopology(Topology.BASELINE), n_on)
            assert s >= q >= b
    print(f"  ratio {ratio:.2f} (default), {ratio20:.2f} (heavy wire)")


def _drive_saving(c_l: float) -> float:
    p = ElectricalParams()
    p = replace(p, C_adc=c_l - p.C_mb)
    n_active = 64 * 9                      # 64 channels of 3x3 taps
    split = DplTopology(Topology.SERIAL_SPLIT, 16)
    base = DplTopology(Topology.BASELINE)
    e_s = dp_drive_energy(p, split, n_active)
    e_b = dp_drive_energy(p, base, n_active)
    return 1.0 - e_s / e_b


def test_criterion_5_drive_energy_saving():
    with criterion(5, "input-drive energy saving at 64 channels"):
        s40 = _drive_saving(40e-15)
        assert 0.62 <= s40 <= 0.82, s40
        savings = [_drive_saving(c) for c in (40e-15, 60e-15, 100e-15,
                                              200e-15)]
        assert all(a > b for a, b in zip(savings, savings[1:])), savings
    print(f"  saving {s40 * 100:.1f}% at 40 fF load; "
          f"{[round(s * 100, 1) for s in savings]} over rising load")


def test_criterion_6_adc_fidelity():
    cfg = AdcConfig()
    half = 2 ** (cfg.r_out - 1)
    with criterion(6, "SAR model: exactness, monotonicity, INL, gain"):
        centers = (np.arange(256) + 0.5 - half) * cfg.lsb_volts + cfg.v_ref_mid
        edges = (np.arange(256) - half) * cfg.lsb_volts + cfg.v_ref_mid
        for v in (centers, edges):
            s, _ = convert_structural(v, None, None, cfg)
            assert np.array_equal(s, convert_behavioral(v, None, None, cfg))
        sweep = cfg.v_ref_mid + np.linspace(-0.5, 0.5, 4001) \
            * cfg.alpha_adc * cfg.V_DDH
        codes, _ = convert_structural(sweep, None, None, cfg)
        assert np.all(np.diff(codes) >= 0)

        nd = NonidealityConfig(seed=4, ladder_mismatch=True, ladder_grid=True)
        stats = {}
        for g in (1, 8, 32):
            mm = MacroConfig(topo=DplTopology(Topology.SERIAL_SPLIT, 2),
                             adc=AdcConfig(gamma=g))
            t = characterize_transfer(mm, nd, gammas=(g,), n_points=33,
                                      iters=1, span=min(1.0, 8.0 / g))
            inl = np.abs(t["mean_inl"][g])
            stats[g] = (float(np.mean(inl)), float(np.max(inl)))
        mean32, peak32 = stats[32]
        assert 0.55 <= mean32 <= 1.65, stats
        assert peak32 <= 4.5, stats
        assert stats[1][0] <= stats[8][0] <= stats[32][0], stats

        prev = None
        for g in (1, 2, 4, 8, 16, 32):
            swing = g * 3.7e-3 / (cfg.alpha_adc * cfg.V_DDH / half)
            if prev is not None:
                assert swing == 2.0 * prev
            prev = swing
    print(f"  mean INL {mean32:.2f} LSB, peak {peak32:.2f} LSB at gain 32")


def test_criterion_7_offset_calibration():
    with criterion(7, "sense-amp offset calibration quality"):
        cal = characterize_calibration(MacroConfig(), samples=1024, seed=0)
        success = float(np.mean(np.abs(cal["post_lsb"]) <= 1.0))
        assert success >= 0.90, success
        in_range = np.abs(cal["offset"]) <= 0.058
        assert np.all(np.abs(cal["residual_volts"][in_range]) <= 0.47e-3)
        ratio = cal["pre_std_lsb"] / cal["post_std_lsb"]
        assert ratio >= 5.0, ratio
    print(f"  success rate {success:.3f}, deviation ratio {ratio:.1f}x")


def test_criterion_8_cycle_model():
    rng = np.random.default_rng(31)
    macro = MacroConfig()
    pipe1 = PipelineConfig()
    with criterion(8, "event schedule == closed-form cycle counts"):
        lay = LayerConfig(kind="conv", K=9, C_in=16, r_in=8, r_out=8,
                          C_out=64)
        assert cycles_per_output(lay, pipe1) == (9, "input-dominated")
        n_out = pipe1.N_cim + -(-lay.r_out * lay.C_out // pipe1.BW) - 1
        assert n_out == 4
        big = LayerConfig(kind="fc", K=1, C_in=128, C_out=256, r_out=8,
                          padding=0)
        assert stall_cycles(big, pipe1) == 18

        checked = 0
        while checked < 1000:
            kind = rng.choice(["conv", "fc"])
            r_w = int(rng.choice([1, 2, 4]))
            max_out = macro.max_outputs(r_w)
            if kind == "conv":
                K = int(rng.choice([1, 4, 9]))
                c_in = 4 * int(rng.integers(1, min(8, 1152 // (4 * K)) + 1))
                lay = LayerConfig(
                    kind="conv", K=K, C_in=c_in,
                    C_out=int(rng.integers(1, min(max_out, 16) + 1)),
                    r_in=int(rng.integers(1, 9)), r_w=r_w,
                    r_out=int(rng.integers(1, 9)),
                    stride=int(rng.integers(1, 3)),
                    padding=int(rng.integers(0, 2)) if K > 1 else 0)
                side = int(rng.integers(3, 6))
                img = rng.integers(0, 2 ** lay.r_in, size=(side, side, c_in))
                ho, wo = out_hw(lay, side, side)
                n_pos, width = ho * wo, wo
            else:
                c_in = int(rng.integers(1, 600))
                lay = LayerConfig(
                    kind="fc", K=1, C_in=c_in,
                    C_out=int(rng.integers(1, min(max_out, 16) + 1)),
                    r_in=int(rng.integers(1, 9)), r_w=r_w,
                    r_out=int(rng.integers(1, 9)), padding=0)
                img = rng.integers(0, 2 ** lay.r_in, size=c_in)
                n_pos, width = 1, 1
            pipe = PipelineConfig(mode=str(rng.choice(["serial",
                                                       "pipelined"])),
                                  N_cim=int(rng.integers(1, 4)),
                                  BW=int(rng.choice([32, 128, 256])))
            wts = rng.integers(0, 2 ** r_w, size=(lay.rows, lay.C_out))
            rep = simulate_layer(lay, img, pipe, macro, wts)
            assert rep.cycles == predict_cycles(lay, pipe, n_pos, width), (
                lay, pipe)
            checked += 1
    print(f"  {checked}/1000 layer configs exact")


def test_criterion_9_rms_vs_gain():
    with criterion(9, "output-noise RMS vs conversion gain"):
        r = characterize_rms(SMALL, NonidealityConfig.defaults(seed=0),
                             gammas=(1, 4, 16, 32), iters=80, n_points=17)
        rms = [r["max_rms"][g] for g in (1, 4, 16, 32)]
        assert all(b >= a - 1e-9 for a, b in zip(rms, rms[1:])), rms
        assert 0.26 <= rms[0] <= 0.78, rms[0]
    print(f"  gain-1 max RMS {rms[0]:.2f} LSB; sweep "
          f"{[round(x, 2) for x in rms]}")


def test_criterion_10_cli_determinism(tmp_path):
    from imagine_sim.cli import main
    from imagine_sim.runtime import BundleLayer, ModelBundle

    rng = np.random.default_rng(3)
    lay = BundleLayer(kind="fc", C_in=16, C_out=4,
                      weights=rng.integers(0, 16, size=(16, 4)))
    bundle = tmp_path / "net.cimb"
    ModelBundle(layers=[lay]).save(bundle)
    imgs = tmp_path / "imgs.npz"
    np.savez(imgs, images=rng.integers(0, 256, size=(6, 16), dtype=np.uint8))

    with criterion(10, "byte-identical reruns, --jobs independent"):
        outs = []
        for name, jobs in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / name
            assert main(["run-net", "--bundle", str(bundle), "--images",
                         str(imgs), "--seed", "17", "--jobs", jobs,
                         "--out", str(out)]) == 0
            outs.append((out / "predictions.csv").read_bytes())
        assert outs[0] == outs[1] == outs[2]
        cal = []
        for name in ("d", "e"):
            out = tmp_path / name
            assert main(["calibrate", "--samples", "128", "--seed", "9",
                         "--out", str(out)]) == 0
            cal.append(next(out.glob("*.csv")).read_bytes())
        assert cal[0] == cal[1]
