"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

Set IMAGINE_SIM_NO_NUMBA=1 before import to force the numpy path (or
when numba is unavailable).  Both paths are bit-identical: the numba
functions run the same float64 operation sequence per sample.
benchmarks/bench_kernels.py compares the two.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("IMAGINE_SIM_NO_NUMBA", "0") not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

__all__ = ["USE_NUMBA", "sar_convert", "accumulate_chain",
           "boundary_runs"]


def _boundary_runs_py(polarity, rows_per_unit):
    """Longest same-polarity run crossing a unit boundary, per column.

    polarity: (n_rows, n_cols) of +/-1.  Returns (lengths, polarities)
    with (0, 0) for columns whose runs all stay inside one unit.
    """
    n, m = polarity.shape
    lens = np.zeros(m, dtype=np.int64)
    pols = np.zeros(m, dtype=np.int64)
    for c in range(m):
        best_len = 0
        best_pol = 0
        start = 0
        for i in range(1, n + 1):
            if i == n or polarity[i, c] != polarity[start, c]:
                if (i - 1) // rows_per_unit > start // rows_per_unit \
                        and (i - start) > best_len:
                    best_len = i - start
                    best_pol = polarity[start, c]
                start = i
        lens[c] = best_len
        pols[c] = best_pol
    return lens, pols


def _sar_convert_py(dv, steps, sa_off, noise, snap_tol):
    n = dv.shape[0]
    r = steps.shape[0]
    codes = np.zeros(n, dtype=np.int64)
    residues = np.zeros((n, r), dtype=np.float64)
    tol_v = snap_tol * 2.0 * steps[0]
    for i in range(n):
        work = dv[i]
        code = 0
        for c in range(r):
            k = r - 1 - c
            if work + sa_off[i] + noise[i, c] >= -tol_v:
                code |= 1 << k
                work -= steps[k]
            else:
                work += steps[k]
            residues[i, c] = work
        codes[i] = code
    return codes, residues


def _accumulate_chain_py(v_dp, a, v_init,
                         inj_on, inj_bound, inj_a, inj_b, inj_mid,
                         leak_on, leak_drift, leak_mid, leak_span):
    r, n = v_dp.shape
    v = v_init.copy()
    if r == 1:
        return v_dp[0].copy()
    per_step = 1.0 / r
    for k in range(r):
        for j in range(n):
            prev = v[j]
            nxt = (1.0 - a) * prev + a * v_dp[k, j]
            if inj_on:
                nxt += inj_bound * np.tanh(inj_a * (v_dp[k, j] - inj_mid)) * \
                    np.tanh(inj_b * (prev - inj_mid))
            if leak_on:
                x = (nxt - leak_mid) / leak_span
                nxt -= leak_drift * x * x * x * per_step
            v[j] = nxt
    return v


if USE_NUMBA:
    _sar_convert_jit = njit(cache=True)(_sar_convert_py)
    _accumulate_chain_jit = njit(cache=True)(_accumulate_chain_py)
    _boundary_runs_jit = njit(cache=True)(_boundary_runs_py)

    def boundary_runs(polarity, rows_per_unit):
        return _boundary_runs_jit(
            np.ascontiguousarray(polarity, dtype=np.int8),
            int(rows_per_unit))

    def sar_convert(dv, steps, sa_off, noise, snap_tol):
        return _sar_convert_jit(
            np.ascontiguousarray(dv, dtype=np.float64),
            np.ascontiguousarray(steps, dtype=np.float64),
            np.ascontiguousarray(np.broadcast_to(np.asarray(sa_off, dtype=np.float64), np.shape(dv)), dtype=np.float64),
            np.ascontiguousarray(noise, dtype=np.float64),
            float(snap_tol),
        )

    def accumulate_chain(v_dp, a, v_init, inj_on=False, inj_bound=0.0,
                         inj_a=0.0, inj_b=0.0, inj_mid=0.4,
                         leak_on=False, leak_drift=0.0, leak_mid=0.4,
                         leak_span=0.4):
        return _accumulate_chain_jit(
            np.ascontiguousarray(v_dp, dtype=np.float64), float(a),
            np.ascontiguousarray(v_init, dtype=np.float64),
            bool(inj_on), float(inj_bound), float(inj_a), float(inj_b),
            float(inj_mid), bool(leak_on), float(leak_drift),
            float(leak_mid), float(leak_span),
        )
else:
    def boundary_runs(polarity, rows_per_unit):
        return _boundary_runs_py(
            np.ascontiguousarray(polarity, dtype=np.int8),
            int(rows_per_unit))

    def sar_convert(dv, steps, sa_off, noise, snap_tol):
        return _sar_convert_py(
            np.ascontiguousarray(dv, dtype=np.float64),
            np.ascontiguousarray(steps, dtype=np.float64),
            np.ascontiguousarray(np.broadcast_to(np.asarray(sa_off, dtype=np.float64), np.shape(dv)), dtype=np.float64),
            np.ascontiguousarray(noise, dtype=np.float64),
            float(snap_tol),
        )

    def accumulate_chain(v_dp, a, v_init, inj_on=False, inj_bound=0.0,
                         inj_a=0.0, inj_b=0.0, inj_mid=0.4,
                         leak_on=False, leak_drift=0.0, leak_mid=0.4,
                         leak_span=0.4):
        return _accumulate_chain_py(
            np.ascontiguousarray(v_dp, dtype=np.float64), float(a),
            np.ascontiguousarray(v_init, dtype=np.float64),
            bool(inj_on), float(inj_bound), float(inj_a), float(inj_b),
            float(inj_mid), bool(leak_on), float(leak_drift),
            float(leak_mid), float(leak_span),
        )
