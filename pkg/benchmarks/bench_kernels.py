"""Compare the compiled kernels against the pure-numpy fallback.

Runs the hot paths (SAR conversion, charge-share chain, boundary-run
scan) in-process, then re-launches itself with IMAGINE_SIM_NO_NUMBA=1 to
time the fallbacks, and prints a side-by-side table.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _bench(repeat: int) -> dict:
    from imagine_sim import _kernels
    from imagine_sim.engine import (CimCycleInput, MacroConfig,
                                    NonidealityConfig, run_cycle)

    rng = np.random.default_rng(0)
    results = {"numba": _kernels.USE_NUMBA}

    pol = rng.choice([-1, 0, 1], size=(1152, 256)).astype(np.int8)
    pol = np.ascontiguousarray(pol)
    _kernels.boundary_runs(pol, 36)     # warm-up / JIT
    t0 = time.perf_counter()
    for _ in range(repeat):
        _kernels.boundary_runs(pol, 36)
    results["boundary_runs_ms"] = (time.perf_counter() - t0) / repeat * 1e3

    macro = MacroConfig()
    noise = NonidealityConfig.defaults(seed=1)
    cyc = CimCycleInput(inputs=rng.integers(0, 256, size=1152),
                        weights=rng.integers(0, 16, size=(1152, 64)),
                        r_in=8, r_w=4)
    run_cycle(cyc, macro, noise, noise_key=(0,))    # warm-up
    t0 = time.perf_counter()
    for i in range(repeat):
        run_cycle(cyc, macro, noise, noise_key=(i,))
    results["run_cycle_noisy_ms"] = (time.perf_counter() - t0) / repeat * 1e3

    ideal = NonidealityConfig.ideal()
    t0 = time.perf_counter()
    for _ in range(repeat):
        run_cycle(cyc, macro, ideal)
    results["run_cycle_ideal_ms"] = (time.perf_counter() - t0) / repeat * 1e3
    return results


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--emit-json", action="store_true",
                    help="print raw numbers only (used by the re-launch)")
    args = ap.parse_args()

    here = _bench(args.repeat)
    if args.emit_json:
        print(json.dumps(here))
        return

    env = dict(os.environ)
    if here["numba"]:
        env["IMAGINE_SIM_NO_NUMBA"] = "1"
        other_name = "numpy fallback"
    else:
        env.pop("IMAGINE_SIM_NO_NUMBA", None)
        other_name = "compiled"
    out = subprocess.run(
        [sys.executable, __file__, "--repeat", str(args.repeat),
         "--emit-json"],
        env=env, capture_output=True, text=True, check=True)
    other = json.loads(out.stdout)

    this_name = "compiled" if here["numba"] else "numpy fallback"
    print(f"{'kernel':<22}{this_name:>16}{other_name:>16}{'speedup':>10}")
    for key in ("boundary_runs_ms", "run_cycle_ideal_ms",
                "run_cycle_noisy_ms"):
        a, b = here[key], other[key]
        fast, slow = (a, b) if here["numba"] else (b, a)
        print(f"{key[:-3]:<22}{a:>14.3f}ms{b:>14.3f}ms{slow / fast:>9.2f}x")


if __name__ == "__main__":
    main()
