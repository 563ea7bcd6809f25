"""Cycle and energy model of the accelerator around the macro.

Models 128b LMEM transfers, im2col reshaping through the 32-sub-block
shift register, serial vs pipelined execution, and off-chip weight
traffic.  The event-ordered simulation and the closed-form cycle
expressions must agree exactly; the property tests enforce that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import E_DRAM_PER_BIT, E_LMEM_PER_BIT, EnergyLedger
from .engine import CimCycleInput, MacroConfig, NonidealityConfig, TraceReport, run_cycle
from .errors import CapacityError, ConfigError, UnmappableError


@dataclass
class LayerConfig:
    """Shape, precisions and mapping of one network layer."""

    kind: str = "conv"            # conv | fc
    K: int = 9                    # kernel taps (9 for 3x3)
    C_in: int = 4
    C_out: int = 4
    r_in: int = 8
    r_w: int = 4
    r_out: int = 8
    gamma: int = 1
    beta: np.ndarray | None = None   # per-output 5b codes
    stride: int = 1
    padding: int = 1
    signed_in: bool = False       # signed -> unsigned conversion on fetch
    signed_out: bool = False      # reverse conversion on store

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.C_out < 1:
            raise ConfigError("C_out must be >= 1")
        if self.kind == "conv":
            if self.C_in < 4 or self.C_in % 4:
                raise ConfigError(
                    "conv layers need C_in >= 4 and a multiple of 4")
        elif self.K != 1:
            raise ConfigError("fc layers use K = 1")
        if self.C_in < 1:
            raise ConfigError("C_in must be >= 1")

    @property
    def rows(self) -> int:
        return self.K * self.C_in

    def kernel_bits(self) -> int:
        return self.K * self.r_in * self.C_in

    def weight_bits(self) -> int:
        return self.K * self.C_in * self.C_out * self.r_w


@dataclass
class PipelineConfig:
    mode: str = "pipelined"       # serial | pipelined
    N_cim: int = 1
    BW: int = 128
    clock: float = 200e6
    lmem_bits: int = 2 ** 20      # on-chip activation memory

    def __post_init__(self):
        if self.mode not in ("serial", "pipelined"):
            raise ConfigError(f"unknown pipeline mode {self.mode!r}")
        if self.N_cim < 1 or self.BW < 1:
            raise ConfigError("N_cim and BW must be >= 1")


def stall_cycles(layer: LayerConfig, pipe: PipelineConfig) -> int:
    """Cycles per output in serial mode: fetch, compute, store in turn."""
    return 1 + pipe.N_cim + math.ceil(layer.r_out * layer.C_out / pipe.BW)


def cycles_per_output(layer: LayerConfig, pipe: PipelineConfig) -> tuple[int, str]:
    """Steady-state pipelined cycles per output and the limiting side.

    Input side: the macro waits for the next kernel's activations;
    output side: new conversions stall until the previous results drain
    through the 128b port.
    """
    n_in = (pipe.N_cim - 1) + math.ceil(layer.kernel_bits() / pipe.BW)
    n_out = pipe.N_cim + math.ceil(layer.r_out * layer.C_out / pipe.BW) - 1
    if n_in >= n_out:
        return n_in, "input-dominated"
    return n_out, "output-dominated"


def row_start_cycles(layer: LayerConfig, pipe: PipelineConfig) -> int:
    """Fetching a whole fresh kernel window at the start of an output row."""
    n_in = (pipe.N_cim - 1) + math.ceil(layer.kernel_bits() / pipe.BW)
    return layer.K * n_in


def out_hw(layer: LayerConfig, h: int, w: int) -> tuple[int, int]:
    k_side = int(round(math.sqrt(layer.K)))
    ho = (h + 2 * layer.padding - k_side) // layer.stride + 1
    wo = (w + 2 * layer.padding - k_side) // layer.stride + 1
    return ho, wo


def im2col_schedule(layer: LayerConfig, image_hw: tuple[int, int]) -> dict:
    """128b transfer plan for one output row of a conv layer.

    Activations live in LMEM in precision-first, channel-second,
    kernel-last order.  Small kernels pack contiguously: a transfer
    carries floor(BW / kernel_bits) whole kernels when one fits, else a
    kernel is split over ceil(kernel_bits / BW) transfers.  Each fetch
    lists which of the 32 shift-register sub-blocks latch it.
    """
    if layer.kind != "conv":
        raise ConfigError("im2col applies to conv layers")
    h, w = image_hw
    ho, wo = out_hw(layer, h, w)
    bw = 128
    kb = layer.kernel_bits()
    if kb <= bw:
        kernels_per_transfer = bw // kb
        transfers_per_kernel = 1
    else:
        kernels_per_transfer = 1
        transfers_per_kernel = math.ceil(kb / bw)
    k_side = int(round(math.sqrt(layer.K)))
    fetches = []
    pos = 0
    while pos < wo:
        take = min(kernels_per_transfer, wo - pos)
        for t in range(transfers_per_kernel):
            bits = min(bw, take * kb - t * bw)
            sub_blocks = sorted({(pos + i) % 32 for i in range(take)})
            fetches.append({"bits": bits, "sub_blocks": sub_blocks,
                            "kernels": take})
        pos += take
    # zero-padded taps of the first output position (worst corner)
    pad_taps = sum(1 for dy in range(k_side) for dx in range(k_side)
                   if dy < layer.padding or dx < layer.padding)
    return {"out_hw": (ho, wo), "fetches": fetches,
            "transfers_per_kernel": transfers_per_kernel,
            "kernels_per_transfer": kernels_per_transfer,
            "padded_taps_first": pad_taps,
            "signed_in": layer.signed_in}


def _im2col_patches(layer: LayerConfig, image: np.ndarray) -> np.ndarray:
    """(positions, K*C_in) patch matrix, channel-fastest within a tap."""
    h, w, c = image.shape
    if c != layer.C_in:
        raise ConfigError(f"image has {c} channels, layer expects {layer.C_in}")
    k_side = int(round(math.sqrt(layer.K)))
    p = layer.padding
    padded = np.zeros((h + 2 * p, w + 2 * p, c), dtype=image.dtype)
    padded[p:p + h, p:p + w] = image
    ho, wo = out_hw(layer, h, w)
    patches = np.empty((ho * wo, layer.K * c), dtype=image.dtype)
    i = 0
    for y in range(ho):
        for x in range(wo):
            y0, x0 = y * layer.stride, x * layer.stride
            patches[i] = padded[y0:y0 + k_side, x0:x0 + k_side].reshape(-1)
            i += 1
    return patches


def predict_cycles(layer: LayerConfig, pipe: PipelineConfig,
                   n_positions: int, row_width: int) -> int:
    """Closed-form total layer cycles from the per-output expressions.

    row_width is the number of output positions per image row (a fresh
    kernel window is fetched at the start of each row).  Serial mode is
    n_positions repetitions of the stall count; pipelined mode is the
    steady-state period per output plus the row-start fetch overheads,
    which the store backlog absorbs in deeply output-dominated layers.
    """
    if n_positions == 0:
        return 0
    if pipe.mode == "serial":
        return n_positions * stall_cycles(layer, pipe)
    f = math.ceil(layer.kernel_bits() / pipe.BW)
    s = math.ceil(layer.r_out * layer.C_out / pipe.BW)
    m = pipe.N_cim
    f_row = layer.K * f if layer.kind == "conv" else f
    rows = n_positions // max(row_width, 1)
    n_in = f + m - 1
    n_out = m + s - 1
    if n_in >= n_out:
        return n_positions * n_in + rows * (f_row - f) + s + 1
    per_row = (row_width - 1) * n_out + f_row + m - 1
    if per_row > row_width * n_out:
        return rows * per_row + s + 1
    return f_row + m + s + (n_positions - 1) * n_out


def simulate_layer(layer: LayerConfig, image: np.ndarray,
                   pipe: PipelineConfig, macro: MacroConfig,
                   weights: np.ndarray,
                   noise: NonidealityConfig | None = None,
                   energy: EnergyLedger | None = None) -> TraceReport:
    """Event-ordered fetch/compute/store simulation of one layer.

    image: H x W x C_in activations (conv) or a flat vector (fc);
    weights: (K*C_in, C_out) offset-binary integers.  Output codes come
    from the macro engine; the schedule only moves data.  The resulting
    cycle count equals the closed-form prediction.
    """
    energy = energy if energy is not None else EnergyLedger()
    if layer.kind == "fc":
        positions = np.asarray(image, dtype=np.int64).reshape(1, -1)
        ho, wo = 1, 1
        row_starts = 1
    else:
        positions = _im2col_patches(layer, np.asarray(image, dtype=np.int64))
        ho, wo = out_hw(layer, image.shape[0], image.shape[1])
        row_starts = ho
    n_pos = positions.shape[0]
    if n_pos == 0:
        return TraceReport(codes=np.zeros((0, layer.C_out), dtype=np.int64),
                           oracle_codes=None, v_dp=np.empty(0),
                           v_acc=np.empty(0), v_mbiw=np.empty(0),
                           flags={}, energy=energy, cycles=0)

    if layer.rows > macro.n_conn_rows:
        raise UnmappableError(
            f"layer needs {layer.rows} rows, macro connects {macro.n_conn_rows}")
    if layer.C_out > macro.max_outputs(layer.r_w):
        raise UnmappableError(
            f"{layer.C_out} outputs exceed {macro.max_outputs(layer.r_w)} "
            f"at r_w={layer.r_w}")
    out_bits = n_pos * layer.C_out * layer.r_out
    if out_bits > pipe.lmem_bits:
        raise CapacityError("output activations exceed LMEM",
                            required_bits=out_bits)

    m = macro.with_gamma(layer.gamma, r_out=layer.r_out)
    noise = noise if noise is not None else NonidealityConfig.ideal()
    state = None
    if noise.any_enabled:
        from .engine import build_analog_state
        state = build_analog_state(m, noise)

    fetch_len = math.ceil(layer.kernel_bits() / pipe.BW)
    store_len = math.ceil(layer.r_out * layer.C_out / pipe.BW)
    macro_len = pipe.N_cim

    codes = np.empty((n_pos, layer.C_out), dtype=np.int64)
    sat = np.empty((n_pos, layer.C_out), dtype=bool)
    fetch_end = np.empty(n_pos, dtype=np.int64)
    macro_end = np.empty(n_pos, dtype=np.int64)
    store_end = np.empty(n_pos, dtype=np.int64)
    t = 0
    for i in range(n_pos):
        cyc = CimCycleInput(inputs=positions[i], weights=weights,
                            r_in=layer.r_in, r_w=layer.r_w,
                            beta_codes=layer.beta)
        rep = run_cycle(cyc, m, noise, state=state, noise_key=(i,))
        codes[i] = rep.codes
        sat[i] = rep.flags["saturation"]
        energy.merge(rep.energy)

        row_start = layer.kind == "conv" and i % wo == 0
        this_fetch = (layer.K * fetch_len if row_start else fetch_len) \
            if pipe.mode == "pipelined" else 1
        if pipe.mode == "serial":
            # test-mode sequencing: one 128b patch update, then compute,
            # then the full result drain, nothing overlapped
            fs = t
            fetch_end[i] = fs + 1
            macro_end[i] = fetch_end[i] + macro_len
            store_end[i] = macro_end[i] + store_len
            t = store_end[i]
        else:
            # shift-register contents stay fixed during the macro op, so
            # the next fetch may overlap everything but its final cycle
            fs = max(fetch_end[i - 1] if i else 0,
                     macro_end[i - 1] - 1 if i else 0)
            fetch_end[i] = fs + this_fetch
            ms = max(fetch_end[i],
                     macro_end[i - 1] if i else 0,
                     store_end[i - 1] - 1 if i else 0)
            macro_end[i] = ms + macro_len
            ss = max(macro_end[i], store_end[i - 1] if i else 0)
            store_end[i] = ss + store_len
        energy.add("lmem", this_fetch * pipe.BW * E_LMEM_PER_BIT)
        energy.add("lmem", store_len * pipe.BW * E_LMEM_PER_BIT)

    total = int(store_end[-1])
    out_shape = (ho, wo, layer.C_out) if layer.kind == "conv" else (layer.C_out,)
    return TraceReport(codes=codes.reshape(out_shape),
                       oracle_codes=None,
                       v_dp=np.empty(0), v_acc=np.empty(0), v_mbiw=np.empty(0),
                       flags={"saturation": sat.reshape(out_shape)},
                       energy=energy, cycles=total,
                       meta={"regime": cycles_per_output(layer, pipe)[1]
                             if pipe.mode == "pipelined" else "serial"})


def dram_overlay_estimate(layers: list, image_hw: tuple[int, int],
                          pipe: PipelineConfig, offchip_bw: int = 32,
                          pj_per_bit: float = E_DRAM_PER_BIT,
                          compute_energy: float | None = None,
                          batch_images: int = 1) -> dict:
    """Off-chip weight-streaming overhead for a network.

    Weights are fetched once per batch of images; latency overhead is
    the ratio of weight-transfer cycles to per-batch compute cycles.
    """
    if offchip_bw <= 0:
        raise ConfigError("offchip_bw must be positive")
    h, w = image_hw
    compute = 0
    weight_bits = 0
    for layer in layers:
        if layer.kind == "conv":
            ho, wo = out_hw(layer, h, w)
            n_pos, width = ho * wo, wo
            h, w = ho, wo
        else:
            n_pos, width = 1, 1
        compute += predict_cycles(layer, pipe, n_pos, width)
        weight_bits += layer.weight_bits()
    dram_cycles = math.ceil(weight_bits / offchip_bw)
    dram_energy = weight_bits * pj_per_bit
    out = {"weight_bits": weight_bits,
           "dram_cycles": dram_cycles,
           "compute_cycles": compute * batch_images,
           "cycle_ratio": dram_cycles / max(compute * batch_images, 1),
           "dram_energy": dram_energy}
    if compute_energy is not None:
        out["energy_ratio"] = dram_energy / (compute_energy * batch_images
                                             + dram_energy)
    return out
