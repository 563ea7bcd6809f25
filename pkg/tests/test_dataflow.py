"""Cycle model: closed forms vs the event-ordered schedule."""

import math

import numpy as np
import pytest

from imagine_sim.dataflow import (
    LayerConfig,
    PipelineConfig,
    _im2col_patches,
    cycles_per_output,
    dram_overlay_estimate,
    im2col_schedule,
    out_hw,
    predict_cycles,
    row_start_cycles,
    simulate_layer,
    stall_cycles,
)
from imagine_sim.engine import MacroConfig
from imagine_sim.errors import CapacityError, ConfigError, UnmappableError

MACRO = MacroConfig()


def test_worked_cycle_examples():
    pipe = PipelineConfig(mode="pipelined", N_cim=1, BW=128)
    lay = LayerConfig(kind="conv", K=9, C_in=16, r_in=8, r_out=8, C_out=64)
    n, tag = cycles_per_output(lay, pipe)
    assert (pipe.N_cim - 1) + math.ceil(lay.kernel_bits() / pipe.BW) == 9
    assert pipe.N_cim + math.ceil(lay.r_out * lay.C_out / pipe.BW) - 1 == 4
    assert (n, tag) == (9, "input-dominated")
    assert row_start_cycles(lay, pipe) == 9 * 9

    lay_big = LayerConfig(kind="fc", K=1, C_in=256, r_in=8, r_out=8, C_out=256,
                          padding=0)
    assert stall_cycles(lay_big, pipe) == 18


def test_serial_total_is_positions_times_stall(rng):
    lay = LayerConfig(kind="conv", K=9, C_in=4, C_out=8, r_in=4, r_w=4,
                      r_out=8)
    pipe = PipelineConfig(mode="serial")
    img = rng.integers(0, 16, size=(6, 6, 4))
    wts = rng.integers(0, 16, size=(lay.rows, lay.C_out))
    rep = simulate_layer(lay, img, pipe, MACRO, wts)
    ho, wo = out_hw(lay, 6, 6)
    assert rep.cycles == ho * wo * stall_cycles(lay, pipe)
    assert rep.cycles == predict_cycles(lay, pipe, ho * wo, wo)


def _random_layer(rng):
    kind = rng.choice(["conv", "fc"])
    r_w = int(rng.choice([1, 2, 4]))
    max_out = MACRO.max_outputs(r_w)
    if kind == "conv":
        K = int(rng.choice([1, 4, 9]))
        c_in = 4 * int(rng.integers(1, MACRO.geom.n_rows // (4 * K) + 1))
        c_in = min(c_in, 32)
        pad = int(rng.integers(0, 2)) if K > 1 else 0
        lay = LayerConfig(kind="conv", K=K, C_in=c_in,
                          C_out=int(rng.integers(1, min(max_out, 32) + 1)),
                          r_in=int(rng.integers(1, 9)), r_w=r_w,
                          r_out=int(rng.integers(1, 9)),
                          stride=int(rng.integers(1, 3)), padding=pad)
        side = int(rng.integers(3, 7))
        img = rng.integers(0, 2 ** lay.r_in, size=(side, side, c_in))
    else:
        c_in = int(rng.integers(1, MACRO.geom.n_rows + 1))
        lay = LayerConfig(kind="fc", K=1, C_in=c_in,
                          C_out=int(rng.integers(1, min(max_out, 32) + 1)),
                          r_in=int(rng.integers(1, 9)), r_w=r_w,
                          r_out=int(rng.integers(1, 9)), padding=0)
        img = rng.integers(0, 2 ** lay.r_in, size=c_in)
    wts = rng.integers(0, 2 ** lay.r_w, size=(lay.rows, lay.C_out))
    return lay, img, wts


@pytest.mark.parametrize("mode", ["serial", "pipelined"])
def test_event_schedule_matches_closed_form(rng, mode):
    for _ in range(60):
        lay, img, wts = _random_layer(rng)
        pipe = PipelineConfig(mode=mode, N_cim=int(rng.integers(1, 4)),
                              BW=int(rng.choice([32, 128, 256])))
        if lay.kind == "conv":
            ho, wo = out_hw(lay, img.shape[0], img.shape[1])
            n_pos, width = ho * wo, wo
        else:
            n_pos, width = 1, 1
        rep = simulate_layer(lay, img, pipe, MACRO, wts)
        assert rep.cycles == predict_cycles(lay, pipe, n_pos, width), (
            lay, pipe)


def test_im2col_patches_match_naive(rng):
    lay = LayerConfig(kind="conv", K=9, C_in=4, C_out=4, stride=1, padding=1)
    img = rng.integers(0, 16, size=(5, 5, 4))
    patches = _im2col_patches(lay, img)
    padded = np.zeros((7, 7, 4), dtype=img.dtype)
    padded[1:6, 1:6] = img
    assert patches.shape == (25, 36)
    # position (y=2, x=3): rows of the patch are taps, channel-fastest
    ref = padded[2:5, 3:6].reshape(-1)
    assert np.array_equal(patches[2 * 5 + 3], ref)


def test_im2col_schedule_packing():
    # small kernel: several whole kernels share one 128b beat
    lay = LayerConfig(kind="conv", K=4, C_in=4, r_in=4, padding=0)
    sched = im2col_schedule(lay, (6, 6))
    assert lay.kernel_bits() == 64
    assert sched["kernels_per_transfer"] == 2
    assert sched["transfers_per_kernel"] == 1
    assert sched["fetches"][0]["kernels"] == 2
    # large kernel: split across several beats
    lay2 = LayerConfig(kind="conv", K=9, C_in=16, r_in=8)
    sched2 = im2col_schedule(lay2, (8, 8))
    assert sched2["transfers_per_kernel"] == 9
    assert sched2["kernels_per_transfer"] == 1
    assert all(f["bits"] <= 128 for f in sched2["fetches"])
    assert sched2["padded_taps_first"] == 5  # top row + left column of 3x3


def test_lmem_capacity_error(rng):
    lay = LayerConfig(kind="conv", K=9, C_in=4, C_out=16, r_out=8)
    pipe = PipelineConfig(lmem_bits=1024)
    img = rng.integers(0, 256, size=(8, 8, 4))
    wts = rng.integers(0, 16, size=(lay.rows, lay.C_out))
    with pytest.raises(CapacityError) as ei:
        simulate_layer(lay, img, pipe, MACRO, wts)
    assert ei.value.required_bits == 64 * 16 * 8


def test_unmappable_layers(rng):
    pipe = PipelineConfig()
    too_tall = LayerConfig(kind="fc", K=1, C_in=MACRO.geom.n_rows + 1,
                           C_out=4, padding=0)
    img = rng.integers(0, 256, size=too_tall.C_in)
    wts = rng.integers(0, 16, size=(too_tall.rows, 4))
    with pytest.raises(UnmappableError):
        simulate_layer(too_tall, img, pipe, MACRO, wts)
    too_wide = LayerConfig(kind="fc", K=1, C_in=8, r_w=4,
                           C_out=MACRO.max_outputs(4) + 1, padding=0)
    wts2 = rng.integers(0, 16, size=(8, too_wide.C_out))
    with pytest.raises(UnmappableError):
        simulate_layer(too_wide, rng.integers(0, 256, size=8), pipe, MACRO,
                       wts2)


def test_layer_config_validation():
    with pytest.raises(ConfigError):
        LayerConfig(kind="dense")
    with pytest.raises(ConfigError):
        LayerConfig(kind="conv", C_in=3)   # channels come in groups of 4
    with pytest.raises(ConfigError):
        LayerConfig(kind="fc", K=9)
    with pytest.raises(ConfigError):
        PipelineConfig(mode="burst")


def _reference_cnn():
    """Small 32x32 conv net used for the off-chip streaming estimates."""
    layers, cin = [], 4
    for c in (32, 32, 64):
        layers.append(LayerConfig(kind="conv", K=9, C_in=cin, C_out=c,
                                  r_in=8, r_w=4, r_out=8, stride=2,
                                  padding=1))
        cin = c
    layers.append(LayerConfig(kind="fc", K=1, C_in=cin * 4 * 4, C_out=10,
                              r_in=8, r_w=4, r_out=8))
    return layers


def test_dram_overlay_reference_cnn():
    # at 32b off-chip bandwidth, streaming all weights takes about as
    # long as processing one image
    layers = _reference_cnn()
    pipe = PipelineConfig()
    est = dram_overlay_estimate(layers, (32, 32), pipe, offchip_bw=32)
    assert 0.7 <= est["cycle_ratio"] <= 1.3
    # huge bandwidth -> negligible overhead
    fast = dram_overlay_estimate(layers, (32, 32), pipe, offchip_bw=10 ** 9)
    assert fast["cycle_ratio"] < 1e-3


def test_dram_overlay_energy_amortized():
    # weights loaded once per inference stream: the fetch energy drops
    # below 10% of the total once the stream is long enough
    layers = _reference_cnn()
    pipe = PipelineConfig()
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(32, 32, 4))
    compute_e, x = 0.0, img
    for lay in layers:
        wts = rng.integers(0, 2 ** lay.r_w, size=(lay.rows, lay.C_out))
        inp = x if lay.kind == "conv" else np.asarray(x).reshape(-1)
        rep = simulate_layer(lay, inp, pipe, MACRO, wts)
        compute_e += rep.energy.total()
        if lay.kind == "conv":
            ho, wo = out_hw(lay, x.shape[0], x.shape[1])
            x = rep.codes.reshape(ho, wo, lay.C_out)
    est = dram_overlay_estimate(layers, (32, 32), pipe, offchip_bw=32,
                                compute_energy=compute_e,
                                batch_images=2048)
    assert est["energy_ratio"] < 0.10
    solo = dram_overlay_estimate(layers, (32, 32), pipe, offchip_bw=32,
                                 compute_energy=compute_e, batch_images=1)
    assert solo["energy_ratio"] > est["energy_ratio"]


def test_dram_overlay_shape():
    layers = [LayerConfig(kind="conv", K=9, C_in=4, C_out=16),
              LayerConfig(kind="fc", K=1, C_in=256, C_out=10, padding=0)]
    pipe = PipelineConfig()
    est = dram_overlay_estimate(layers, (8, 8), pipe, compute_energy=1e-9)
    assert est["weight_bits"] == sum(l.weight_bits() for l in layers)
    assert est["dram_cycles"] == math.ceil(est["weight_bits"] / 32)
    assert 0 < est["energy_ratio"] < 1
    assert est["cycle_ratio"] == est["dram_cycles"] / est["compute_cycles"]
