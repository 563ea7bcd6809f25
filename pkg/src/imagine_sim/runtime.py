"""Model bundles and full-network inference.

A ModelBundle is the on-disk handoff between trainers and this
simulator: layer shapes and precisions, packed weight bit planes,
per-output scale/offset codes (gamma, beta), quantization metadata and
an optional sense-amp calibration snapshot.  The binary format is
little-endian and fully deterministic, so saving a loaded bundle
reproduces the input byte for byte; see docs/bundle_format.md for the
field table.

run_network maps each layer onto the macro (unit allocation, column
batching when a layer has more outputs than the array has columns) and
scores predictions image by image.  Noise streams are keyed by
(image, layer, first column of the batch), so results do not depend on
evaluation order or worker count.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .adc import dump_cal_codes
from .dataflow import LayerConfig, PipelineConfig, predict_cycles, _im2col_patches, out_hw
from .dparray import DplTopology, pack_weight_plane, unpack_weight_plane
from .energy import EnergyLedger
from .engine import (
    CimCycleInput,
    MacroConfig,
    NonidealityConfig,
    build_analog_state,
    run_cycle,
)
from .errors import BundleError, UnmappableError

BUNDLE_MAGIC = b"CIMB"
BUNDLE_VERSION = 1
ENDIAN_TAG = 0x0102          # reads back 0x0201 on a big-endian parser

_HEADER = struct.Struct("<4sHHH6x")
_LAYER_FIXED = struct.Struct("<8BIIHH")
_LAYER_SCALES = struct.Struct("<ddd")
_U32 = struct.Struct("<I")

_KIND_CODES = {"fc": 0, "conv": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

_FLAG_SIGNED_IN = 1
_FLAG_SIGNED_OUT = 2
_FLAG_RELU = 4

SUPPORTED_R_W = (1, 2, 4)
SUPPORTED_GAMMAS = (1, 2, 4, 8, 16, 32)


@dataclass
class BundleLayer:
    """One network layer as carried in a bundle.

    weights holds offset-binary integers in [0, 2^r_w), shaped
    (K*C_in, C_out); bit k of output o occupies bit-plane column
    o*r_w + k (LSB in the lowest-indexed column, matching the pairwise
    share direction in hardware).  The three scales are trainer-side
    metadata only; integer inference never reads them.
    """

    kind: str
    C_in: int
    C_out: int
    weights: np.ndarray
    r_in: int = 8
    r_w: int = 4
    r_out: int = 8
    gamma: int = 1
    K: int = 1
    stride: int = 1
    padding: int = 0
    signed_in: bool = False
    signed_out: bool = False
    relu: bool = False
    shift: int = 0
    beta: np.ndarray | None = None
    in_scale: float = 1.0
    w_scale: float = 1.0
    out_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise BundleError(f"unknown layer kind {self.kind!r}")
        if not 1 <= self.r_in <= 8:
            raise BundleError(f"unsupported input precision r_in={self.r_in} (max 8)")
        if self.r_w not in SUPPORTED_R_W:
            raise BundleError(
                f"unsupported weight precision r_w={self.r_w} (supported: 1, 2, 4)")
        if not 1 <= self.r_out <= 8:
            raise BundleError(f"unsupported output precision r_out={self.r_out} (max 8)")
        if self.gamma not in SUPPORTED_GAMMAS:
            raise BundleError(f"unsupported gain gamma={self.gamma}")
        if self.kind == "fc" and self.K != 1:
            raise BundleError("fc layers use K = 1")
        if not 0 <= self.shift <= 7:
            raise BundleError("shift must be in [0, 7]")
        self.weights = np.asarray(self.weights, dtype=np.int64)
        if self.weights.shape != (self.rows, self.C_out):
            raise BundleError(
                f"weights shape {self.weights.shape} != ({self.rows}, {self.C_out})")
        if np.any(self.weights < 0) or np.any(self.weights >= 2 ** self.r_w):
            raise BundleError("weights must be offset-binary in [0, 2^r_w)")
        if self.beta is None:
            self.beta = np.zeros(self.C_out, dtype=np.int64)
        self.beta = np.asarray(self.beta, dtype=np.int64)
        if self.beta.shape != (self.C_out,):
            raise BundleError(f"beta shape {self.beta.shape} != ({self.C_out},)")
        if np.any(self.beta < -15) or np.any(self.beta > 15):
            raise BundleError("beta codes must fit the signed 5b offset range")

    @property
    def rows(self) -> int:
        return self.K * self.C_in

    def weight_bit_planes(self) -> np.ndarray:
        """(rows, C_out * r_w) {0,1} matrix, LSB-first per output."""
        bits = ((self.weights[:, :, None] >> np.arange(self.r_w)[None, None, :])
                & 1)
        return bits.reshape(self.rows, self.C_out * self.r_w).astype(np.uint8)

    def to_layer_config(self) -> LayerConfig:
        return LayerConfig(kind=self.kind, K=self.K, C_in=self.C_in,
                           C_out=self.C_out, r_in=self.r_in, r_w=self.r_w,
                           r_out=self.r_out, gamma=self.gamma,
                           beta=self.beta, stride=self.stride,
                           padding=self.padding, signed_in=self.signed_in,
                           signed_out=self.signed_out)


@dataclass
class ModelBundle:
    """A validated in-memory network plus optional calibration text."""

    layers: list[BundleLayer]
    calibration: str | None = None

    def __post_init__(self):
        if not self.layers:
            raise BundleError("bundle has no layers")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.kind == "fc" and prev.kind == "fc" and nxt.C_in != prev.C_out:
                raise BundleError(
                    f"layer chain mismatch: {prev.C_out} outputs feed "
                    f"{nxt.C_in} inputs")

    def to_bytes(self) -> bytes:
        out = [_HEADER.pack(BUNDLE_MAGIC, BUNDLE_VERSION, ENDIAN_TAG,
                            len(self.layers))]
        for lay in self.layers:
            flags = ((_FLAG_SIGNED_IN if lay.signed_in else 0)
                     | (_FLAG_SIGNED_OUT if lay.signed_out else 0)
                     | (_FLAG_RELU if lay.relu else 0))
            out.append(_LAYER_FIXED.pack(
                _KIND_CODES[lay.kind], lay.K, lay.r_in, lay.r_w, lay.r_out,
                lay.gamma, flags, lay.shift, lay.C_in, lay.C_out,
                lay.stride, lay.padding))
            out.append(lay.beta.astype(np.int8).tobytes())
            out.append(_LAYER_SCALES.pack(lay.in_scale, lay.w_scale,
                                          lay.out_scale))
            blob = pack_weight_plane(lay.weight_bit_planes())
            out.append(_U32.pack(len(blob)))
            out.append(blob)
        cal = (self.calibration or "").encode()
        out.append(_U32.pack(len(cal)))
        out.append(cal)
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ModelBundle":
        if len(raw) < _HEADER.size:
            raise BundleError("bundle truncated (no header)")
        magic, version, endian, n_layers = _HEADER.unpack_from(raw, 0)
        if magic != BUNDLE_MAGIC:
            raise BundleError(f"bad bundle magic {magic!r}")
        if version != BUNDLE_VERSION:
            raise BundleError(f"unsupported bundle version {version}")
        if endian != ENDIAN_TAG:
            raise BundleError("endianness tag mismatch (not little-endian?)")
        pos = _HEADER.size
        layers = []
        for i in range(n_layers):
            try:
                (kind_code, K, r_in, r_w, r_out, gamma, flags, shift,
                 C_in, C_out, stride, padding) = _LAYER_FIXED.unpack_from(raw, pos)
                pos += _LAYER_FIXED.size
                beta = np.frombuffer(raw, dtype=np.int8, count=C_out,
                                     offset=pos).astype(np.int64)
                pos += C_out
                in_s, w_s, out_s = _LAYER_SCALES.unpack_from(raw, pos)
                pos += _LAYER_SCALES.size
                (blob_len,) = _U32.unpack_from(raw, pos)
                pos += _U32.size
                blob = raw[pos:pos + blob_len]
                if len(blob) != blob_len:
                    raise struct.error("weight blob short")
                pos += blob_len
            except (struct.error, ValueError) as exc:
                raise BundleError(f"layer {i} truncated: {exc}") from exc
            if kind_code not in _KIND_NAMES:
                raise BundleError(f"layer {i}: unknown kind code {kind_code}")
            bits = unpack_weight_plane(blob)
            if bits.shape != (K * C_in, C_out * r_w):
                raise BundleError(
                    f"layer {i}: weight plane is {bits.shape}, expected "
                    f"({K * C_in}, {C_out * r_w})")
            planes = bits.reshape(K * C_in, C_out, r_w).astype(np.int64)
            weights = (planes << np.arange(r_w)[None, None, :]).sum(axis=2)
            try:
                layers.append(BundleLayer(
                    kind=_KIND_NAMES[kind_code], C_in=C_in, C_out=C_out,
                    weights=weights, r_in=r_in, r_w=r_w, r_out=r_out,
                    gamma=gamma, K=K, stride=stride, padding=padding,
                    signed_in=bool(flags & _FLAG_SIGNED_IN),
                    signed_out=bool(flags & _FLAG_SIGNED_OUT),
                    relu=bool(flags & _FLAG_RELU), shift=shift,
                    beta=beta, in_scale=in_s, w_scale=w_s, out_scale=out_s))
            except BundleError as exc:
                raise BundleError(f"layer {i}: {exc}") from exc
        try:
            (cal_len,) = _U32.unpack_from(raw, pos)
        except struct.error as exc:
            raise BundleError("calibration length truncated") from exc
        pos += _U32.size
        cal = raw[pos:pos + cal_len]
        if len(cal) != cal_len:
            raise BundleError("calibration snapshot truncated")
        pos += cal_len
        if pos != len(raw):
            raise BundleError(f"{len(raw) - pos} trailing bytes after bundle")
        return cls(layers=layers,
                   calibration=cal.decode() if cal_len else None)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def load_bundle(path) -> ModelBundle:
    return ModelBundle.load(path)


# --- mapping -------------------------------------------------------------------


@dataclass
class LayerMapping:
    """Placement of one layer onto the macro array."""

    rows: int
    units: int                      # DP units per column (36 rows each)
    connected_units: int            # units left on the DPL during compute
    col_batches: list               # [(first_output, last_output+1), ...]
    row_passes: list                # [(first_row, last_row+1), ...]
    digital_partial_sums: bool      # rows split across passes, summed digitally


@dataclass
class MappingPlan:
    layers: list[LayerMapping]


def plan_mapping(bundle: ModelBundle, macro: MacroConfig) -> MappingPlan:
    """Deterministic unit/block allocation for every layer.

    Outputs beyond the array's column capacity run as sequential column
    batches.  fc layers taller than the array run as multiple row
    passes whose codes are summed digitally around the mid-rail code; a
    conv layer whose single filter does not fit is unmappable because
    the accumulation would have to happen inside one analog cycle.
    """
    geom = macro.geom
    max_rows = geom.n_rows
    mapped = []
    for i, lay in enumerate(bundle.layers):
        rows = lay.rows
        if rows > max_rows:
            if lay.kind == "conv":
                raise UnmappableError(
                    f"layer {i}: filter needs {rows} rows, array has {max_rows}")
            row_passes = [(s, min(s + max_rows, rows))
                          for s in range(0, rows, max_rows)]
        else:
            row_passes = [(0, rows)]
        pass_rows = row_passes[0][1] - row_passes[0][0]
        units = math.ceil(pass_rows / geom.rows_per_unit)
        cap = macro.max_outputs(lay.r_w)
        col_batches = [(s, min(s + cap, lay.C_out))
                       for s in range(0, lay.C_out, cap)]
        mapped.append(LayerMapping(rows=rows, units=units,
                                   connected_units=units,
                                   col_batches=col_batches,
                                   row_passes=row_passes,
                                   digital_partial_sums=len(row_passes) > 1))
    return MappingPlan(layers=mapped)


# --- inference -----------------------------------------------------------------


@dataclass
class NetworkResult:
    """Per-image predictions plus the aggregate roll-up of one run."""

    predictions: np.ndarray
    scores: np.ndarray
    accuracy: float | None = None
    oracle_predictions: np.ndarray | None = None
    oracle_accuracy: float | None = None
    energy: EnergyLedger = field(default_factory=EnergyLedger)
    cycles_per_image: int | None = None
    meta: dict = field(default_factory=dict)


def _layer_macro(macro: MacroConfig, lay: BundleLayer,
                 mapping: LayerMapping) -> MacroConfig:
    topo = DplTopology(macro.topo.variant, mapping.connected_units)
    return replace(macro.with_gamma(lay.gamma, lay.r_out), topo=topo)


def _activation(codes: np.ndarray, lay: BundleLayer, next_r_in: int) -> np.ndarray:
    """Code-domain nonlinearity between layers.

    relu rectifies around the mid-rail code (signed outputs sit at
    2^(r_out-1) for zero); shift then drops LSBs so the result fits the
    next layer's input precision.
    """
    if lay.relu:
        y = np.maximum(codes - 2 ** (lay.r_out - 1), 0)
    else:
        y = codes.copy()
    if lay.shift:
        y >>= lay.shift
    return np.clip(y, 0, 2 ** next_r_in - 1)


def _run_layer(x: np.ndarray, lay: BundleLayer, mapping: LayerMapping,
               macro_l: MacroConfig, noise: NonidealityConfig, state,
               key: tuple, energy: EnergyLedger) -> np.ndarray:
    """One layer on a (rows,) activation vector -> (C_out,) codes."""
    half = 2 ** (lay.r_out - 1)
    encoding = "bipolar" if lay.signed_in else "unipolar"
    acc = np.zeros(lay.C_out, dtype=np.int64)
    for p, (rs, re) in enumerate(mapping.row_passes):
        part = np.zeros(lay.C_out, dtype=np.int64)
        for cs, ce in mapping.col_batches:
            cyc = CimCycleInput(inputs=x[rs:re], weights=lay.weights[rs:re, cs:ce],
                                r_in=lay.r_in, r_w=lay.r_w,
                                beta_codes=lay.beta[cs:ce] if p == 0 else None,
                                encoding=encoding)
            rep = run_cycle(cyc, macro_l, noise, state, noise_key=key + (p, cs))
            part[cs:ce] = rep.codes
            energy.merge(rep.energy)
        acc += part - half
    return np.clip(acc + half, 0, 2 ** lay.r_out - 1)


def run_network(bundle: ModelBundle, images: np.ndarray,
                macro: MacroConfig | None = None,
                pipe: PipelineConfig | None = None,
                noise: NonidealityConfig | None = None,
                labels: np.ndarray | None = None,
                image_offset: int = 0,
                with_oracle: bool = True) -> NetworkResult:
    """Score a network on a batch of images.

    images: (N, C_in) unsigned integers below 2^r_in of the first layer
    (fc-first networks), or (N, H, W, C_in) for conv-first ones.  When
    any noise source is enabled and with_oracle is set, an ideal-mode
    pass runs alongside so accuracy can be compared against the exact
    integer reference.  image_offset shifts the RNG image index so a
    sharded run reproduces the unsharded one.
    """
    macro = macro or MacroConfig()
    noise = noise or NonidealityConfig.ideal()
    plan = plan_mapping(bundle, macro)

    macros = [_layer_macro(macro, lay, m)
              for lay, m in zip(bundle.layers, plan.layers)]
    states = [build_analog_state(m, noise) if noise.any_enabled else None
              for m in macros]

    n_images = images.shape[0]
    last = bundle.layers[-1]
    scores = np.zeros((n_images, last.C_out), dtype=np.int64)
    energy = EnergyLedger()

    def forward(img_idx: int, use_noise: NonidealityConfig, use_states,
                ledger: EnergyLedger) -> np.ndarray:
        x = np.asarray(images[img_idx]).reshape(-1).astype(np.int64)
        feat_hw = None
        if bundle.layers[0].kind == "conv":
            feat_hw = images.shape[1:3]
            x = np.asarray(images[img_idx], dtype=np.int64)
        for li, lay in enumerate(bundle.layers):
            key = (image_offset + img_idx, li)
            if lay.kind == "conv":
                patches = _im2col_patches(lay.to_layer_config(), x)
                outs = [
                    _run_layer(patches[p], lay, plan.layers[li], macros[li],
                               use_noise, use_states[li], key + (p,), ledger)
                    for p in range(patches.shape[0])
                ]
                ho, wo = out_hw(lay.to_layer_config(), *feat_hw)
                feat_hw = (ho, wo)
                codes = np.stack(outs).reshape(ho, wo, lay.C_out)
            else:
                codes = _run_layer(x, lay, plan.layers[li], macros[li],
                                   use_noise, use_states[li], key, ledger)
            if li == len(bundle.layers) - 1:
                return codes.reshape(-1)
            nxt = bundle.layers[li + 1]
            x = _activation(codes, lay, nxt.r_in)
            if nxt.kind == "fc":
                x = x.reshape(-1)
        return codes.reshape(-1)

    for n in range(n_images):
        scores[n] = forward(n, noise, states, energy)
    predictions = scores.argmax(axis=1)

    oracle_pred = None
    oracle_acc = None
    if noise.any_enabled and with_oracle:
        ideal = NonidealityConfig.ideal(seed=noise.seed)
        idle = EnergyLedger()
        o_scores = np.zeros_like(scores)
        none_states = [None] * len(bundle.layers)
        for n in range(n_images):
            o_scores[n] = forward(n, ideal, none_states, idle)
        oracle_pred = o_scores.argmax(axis=1)
        if labels is not None:
            oracle_acc = float(np.mean(oracle_pred == labels[:n_images]))

    accuracy = None
    if labels is not None:
        accuracy = float(np.mean(predictions == labels[:n_images]))

    cycles = None
    if pipe is not None:
        cycles = 0
        hw = images.shape[1:3] if bundle.layers[0].kind == "conv" else (1, 1)
        for lay, mapping in zip(bundle.layers, plan.layers):
            lc = lay.to_layer_config()
            if lay.kind == "conv":
                ho, wo = out_hw(lc, *hw)
                per = predict_cycles(lc, pipe, ho * wo, wo)
                hw = (ho, wo)
            else:
                per = predict_cycles(lc, pipe, 1, 1)
            cycles += per * len(mapping.col_batches) * len(mapping.row_passes)
        cycles = int(cycles)

    return NetworkResult(predictions=predictions, scores=scores,
                         accuracy=accuracy, oracle_predictions=oracle_pred,
                         oracle_accuracy=oracle_acc, energy=energy,
                         cycles_per_image=cycles,
                         meta={"n_images": n_images,
                               "noisy": noise.any_enabled})


def snapshot_calibration(macro: MacroConfig, noise: NonidealityConfig) -> str:
    """Calibration-code dump of the analog state a bundle would run under."""
    state = build_analog_state(macro, noise)
    return dump_cal_codes(state.cal_units)
