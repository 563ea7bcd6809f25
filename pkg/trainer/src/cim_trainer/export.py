"""Model-file writer/reader for the accelerator's bundle format.

Implements the published little-endian container (magic "CIMB",
version 1): a fixed header, per-layer integer parameter records with an
embedded bit-plane blob (magic "CIMW"), and a trailing calibration
snapshot.  The exporter is deliberately independent of the accelerator
runtime: it talks to it only through bytes on disk, and self-verifies
every export by re-reading the file and replaying an integer forward
pass.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import intsim

MAGIC = b"CIMB"
VERSION = 1
ENDIAN_TAG = 0x0102
_HEADER = struct.Struct("<4sHHH6x")
_LAYER_FIXED = struct.Struct("<8BIIHH")
_LAYER_SCALES = struct.Struct("<ddd")
_U32 = struct.Struct("<I")
_CIMW = struct.Struct("<4sHxxII")

_FLAG_SIGNED_IN = 1
_FLAG_SIGNED_OUT = 2
_FLAG_RELU = 4

KIND_FC = 0


class ExportError(RuntimeError):
    pass


def _pack_planes(planes: np.ndarray) -> bytes:
    n_rows, n_cols = planes.shape
    head = _CIMW.pack(b"CIMW", 1, n_rows, n_cols)
    return head + np.packbits(planes.reshape(-1).astype(np.uint8),
                              bitorder="little").tobytes()


def _unpack_planes(blob: bytes) -> np.ndarray:
    magic, version, n_rows, n_cols = _CIMW.unpack(blob[:_CIMW.size])
    if magic != b"CIMW" or version != 1:
        raise ExportError("bad weight-plane blob")
    n_bits = n_rows * n_cols
    bits = np.unpackbits(np.frombuffer(blob[_CIMW.size:], dtype=np.uint8),
                         count=n_bits, bitorder="little")
    return bits.reshape(n_rows, n_cols)


def _bit_planes(lay: intsim.IntLayer) -> np.ndarray:
    """(rows, C_out*r_w) {0,1}; bit k of output o in column o*r_w + k."""
    bits = ((lay.weights[:, :, None] >> np.arange(lay.r_w)[None, None, :])
            & 1)
    return bits.reshape(lay.rows, lay.weights.shape[1] * lay.r_w)


_SUPPORTED_R_W = (1, 2, 4)
_SUPPORTED_GAMMAS = (1, 2, 4, 8, 16, 32)


def _check_encodable(i: int, lay: intsim.IntLayer) -> None:
    if lay.r_w not in _SUPPORTED_R_W:
        raise ExportError(f"layer {i}: weight precision {lay.r_w} "
                          f"not in {_SUPPORTED_R_W}")
    if lay.gamma not in _SUPPORTED_GAMMAS:
        raise ExportError(f"layer {i}: gain {lay.gamma} "
                          f"not in {_SUPPORTED_GAMMAS}")
    if not (1 <= lay.r_in <= 8 and 1 <= lay.r_out <= 8):
        raise ExportError(f"layer {i}: precisions out of the 1..8 range")
    if np.any(lay.weights < 0) or np.any(lay.weights >= 2 ** lay.r_w):
        raise ExportError(f"layer {i}: weights exceed [0, 2^r_w)")
    if np.any(lay.beta < -15) or np.any(lay.beta > 15):
        raise ExportError(f"layer {i}: beta codes exceed [-15, 15]")


def to_bytes(layers: list[intsim.IntLayer], calibration: str = "",
             scales: list | None = None) -> bytes:
    out = [_HEADER.pack(MAGIC, VERSION, ENDIAN_TAG, len(layers))]
    scales = scales or [(1.0, 1.0, 1.0)] * len(layers)
    for i, (lay, sc) in enumerate(zip(layers, scales)):
        _check_encodable(i, lay)
        c_in, c_out = lay.weights.shape
        planes = _bit_planes(lay)
        if planes.shape != (c_in, c_out * lay.r_w):
            raise ExportError(
                f"bit-plane count {planes.shape[1]} != {c_out * lay.r_w}")
        out.append(_LAYER_FIXED.pack(
            KIND_FC, 1, lay.r_in, lay.r_w, lay.r_out, lay.gamma,
            _FLAG_RELU if lay.relu else 0, lay.shift, c_in, c_out, 1, 0))
        out.append(lay.beta.astype(np.int8).tobytes())
        out.append(_LAYER_SCALES.pack(*sc))
        blob = _pack_planes(planes)
        out.append(_U32.pack(len(blob)))
        out.append(blob)
    cal = calibration.encode()
    out.append(_U32.pack(len(cal)))
    out.append(cal)
    return b"".join(out)


def from_bytes(raw: bytes) -> tuple[list[intsim.IntLayer], str]:
    if len(raw) < _HEADER.size:
        raise ExportError("truncated header")
    magic, version, endian, n_layers = _HEADER.unpack(raw[:_HEADER.size])
    if magic != MAGIC or version != VERSION or endian != ENDIAN_TAG:
        raise ExportError("not a model bundle")
    pos = _HEADER.size
    layers = []
    try:
        for i in range(n_layers):
            kind, k, r_in, r_w, r_out, gamma, flags, shift, c_in, c_out, \
                stride, padding = _LAYER_FIXED.unpack_from(raw, pos)
            pos += _LAYER_FIXED.size
            if kind != KIND_FC:
                raise ExportError(f"layer {i}: only fc layers supported here")
            beta = np.frombuffer(raw, dtype=np.int8, count=c_out,
                                 offset=pos).astype(np.int64)
            pos += c_out
            pos += _LAYER_SCALES.size
            (blob_len,) = _U32.unpack_from(raw, pos)
            pos += _U32.size
            planes = _unpack_planes(raw[pos:pos + blob_len])
            pos += blob_len
            shifted = planes.reshape(c_in, c_out, r_w).astype(np.int64)
            weights = (shifted << np.arange(r_w)[None, None, :]).sum(axis=2)
            layers.append(intsim.IntLayer(
                weights=weights, r_in=r_in, r_w=r_w, r_out=r_out,
                gamma=gamma, beta=beta, relu=bool(flags & _FLAG_RELU),
                shift=shift))
        (cal_len,) = _U32.unpack_from(raw, pos)
        pos += _U32.size
        cal = raw[pos:pos + cal_len].decode()
    except (struct.error, ValueError) as exc:
        raise ExportError(f"truncated or corrupt bundle: {exc}") from exc
    return layers, cal


def export_bundle(layers: list[intsim.IntLayer], path,
                  verify_images: np.ndarray | None = None,
                  calibration: str = "") -> None:
    """Write the model file and prove the round trip.

    Verification: the written bytes re-serialize identically, and the
    re-read integers predict the same codes as the in-memory model on
    up to 100 verification samples.
    """
    raw = to_bytes(layers, calibration)
    with open(path, "wb") as fh:
        fh.write(raw)
    back, _ = from_bytes(open(path, "rb").read())
    if to_bytes(back, calibration) != raw:
        raise ExportError("round-trip re-serialization mismatch")
    if verify_images is not None:
        sample = np.asarray(verify_images[:100], dtype=np.int64)
        if not np.array_equal(intsim.forward(back, sample),
                              intsim.forward(layers, sample)):
            raise ExportError("re-read model disagrees with the trained one")
