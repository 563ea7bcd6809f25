"""Command-line front end.

Subcommands: characterize (static transfer / noise / calibration
sweeps), sim-layer (cycle and energy model for configured layers),
run-net (bundle inference with accuracy scoring), sweep (cartesian
parameter studies), calibrate (offset-calibration statistics).

Every output file starts with a provenance header (tool version, seed,
effective-config digest) and reruns with the same arguments are
byte-identical, independent of --jobs.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config
from .dataflow import out_hw, predict_cycles, simulate_layer
from .engine import (
    MacroConfig,
    NonidealityConfig,
    characterize_calibration,
    characterize_clustering,
    characterize_rms,
    characterize_transfer,
)
from .errors import (
    BundleError,
    CapacityError,
    ConfigError,
    SimError,
    UnmappableError,
    UsageError,
)
from .mbiw import InjectionErrorModel
from .runtime import ModelBundle, plan_mapping, run_network

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNMAPPABLE = 3


def _provenance(cfg: Config, seed: int) -> list[str]:
    return [f"# imagine-sim {__version__}",
            f"# seed {seed}",
            f"# config {cfg.digest()}"]


def _write_csv(path: Path, header_lines: list[str], columns: dict) -> None:
    """columns: ordered name -> 1-D sequence; all the same length."""
    names = list(columns)
    rows = len(next(iter(columns.values())))
    lines = list(header_lines)
    lines.append(",".join(names))
    for r in range(rows):
        lines.append(",".join(_fmt(columns[n][r]) for n in names))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="config file path")
    p.add_argument("--seed", type=int, default=None, help="master RNG seed")
    p.add_argument("--jobs", type=int, default=1,
                   help="worker processes (results are independent of this)")
    p.add_argument("--corner", choices=("SS", "TT", "FF"), default=None)
    p.add_argument("--vdd", default=None, metavar="LOW/HIGH",
                   help="supply pair in volts, e.g. 0.4/0.8")
    p.add_argument("--topology", choices=("baseline", "serial", "parallel"),
                   default=None)
    p.add_argument("--emit", choices=("csv", "plot-data"), default="csv")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                   help="config override (repeatable)")


def _load_config(args) -> Config:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set needs SEC.KEY=VAL, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["noise.seed"] = str(args.seed)
    if args.corner is not None:
        overrides["settling.corner"] = args.corner
    if args.topology is not None:
        overrides["topology.variant"] = args.topology
    if args.vdd is not None:
        try:
            low, high = (float(x) for x in args.vdd.split("/"))
        except ValueError:
            raise ConfigError(f"--vdd needs LOW/HIGH volts, got {args.vdd!r}")
        overrides["electrical.v_ddl"] = str(low)
        overrides["electrical.v_ddh"] = str(high)
    return Config.load(args.config, overrides=overrides)


def _context(args):
    cfg = _load_config(args)
    seed = cfg.get("noise", "seed", int, 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, cfg.macro(), cfg.noise(), seed, out


# --- characterize --------------------------------------------------------------


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def cmd_characterize(args) -> int:
    cfg, macro, noise, seed, out = _context(args)
    gammas = _parse_int_list(args.gamma)
    head = _provenance(cfg, seed)

    transfer = characterize_transfer(macro, noise, gammas=tuple(gammas),
                                     n_points=args.points, iters=args.iters)
    cols = {"fill": transfer["fill"]}
    for g in gammas:
        cols[f"code_g{g}"] = transfer["mean_code"][g]
        cols[f"inl_g{g}"] = transfer["mean_inl"][g]
        cols[f"rms_g{g}"] = transfer["rms"][g]
    _write_csv(out / "transfer.csv", head, cols)

    clus = characterize_clustering(macro, noise, iters=args.iters)
    _write_csv(out / "clustering.csv", head,
               {"run_length": clus["run_length"], "mean_inl": clus["mean_inl"]})

    cal = characterize_calibration(macro, samples=args.cal_samples, seed=seed)
    _write_csv(out / "calibration.csv", head, {
        "column": np.arange(cal["offset"].size),
        "offset_v": cal["offset"],
        "pre_lsb8": cal["pre_lsb"],
        "post_lsb8": cal["post_lsb"],
        "residual_v": cal["residual_volts"],
        "flagged": cal["flagged"],
    })

    rms = characterize_rms(macro, noise, gammas=tuple(gammas),
                           iters=args.iters, n_points=args.rms_points)
    _write_csv(out / "rms.csv", head,
               {"gamma": gammas,
                "max_rms_lsb": [rms["max_rms"][g] for g in gammas]})

    # machine-readable noise statistics for hardware-aware trainers
    inj = InjectionErrorModel()
    keys = ["inl_bound_lsb", "injection_bound_v", "sa_residual_sigma_lsb8",
            "cal_success_rate"]
    vals = [max(abs(v) for v in clus["mean_inl"]) / 8.0,  # measured at gain 8
            inj.bound,
            cal["post_std_lsb"],
            float(np.mean(np.abs(cal["post_lsb"]) <= 1.0))]
    for g in gammas:
        keys.append(f"rms_lsb_g{g}")
        vals.append(rms["max_rms"][g])
    _write_csv(out / "hw_noise_spec.csv", head, {"key": keys, "value": vals})

    print(f"characterize: gammas={gammas} "
          f"max_rms={max(rms['max_rms'].values()):.2f} LSB "
          f"cal_success={vals[3]:.3f} -> {out}")
    return EXIT_OK


# --- sim-layer -----------------------------------------------------------------


def cmd_sim_layer(args) -> int:
    cfg, macro, noise, seed, out = _context(args)
    pipe = cfg.pipeline()
    if args.mode is not None:
        from dataclasses import replace
        pipe = replace(pipe, mode=args.mode)
    layers = cfg.layers()
    if not layers:
        raise ConfigError("no [layer.N] sections in config")
    h, w = (int(x) for x in args.image_hw.split("x"))

    names, cycles_col, energy_col = [], [], []
    hw = (h, w)
    rng = np.random.default_rng(seed)
    for i, lay in enumerate(layers):
        if lay.kind == "conv":
            ho, wo = out_hw(lay, *hw)
            cycles = predict_cycles(lay, pipe, ho * wo, wo)
        else:
            cycles = predict_cycles(lay, pipe, 1, 1)
        energy = float("nan")
        if args.simulate:
            if lay.kind == "conv":
                img = rng.integers(0, 2 ** lay.r_in, size=(*hw, lay.C_in))
            else:
                img = rng.integers(0, 2 ** lay.r_in, size=lay.rows)
            wts = rng.integers(0, 2 ** lay.r_w, size=(lay.rows, lay.C_out))
            rep = simulate_layer(lay, img, pipe, macro, wts, noise)
            energy = rep.energy.total()
            cycles = rep.cycles
        names.append(f"{lay.kind}{i}")
        cycles_col.append(cycles)
        energy_col.append(energy)
        if lay.kind == "conv":
            hw = out_hw(lay, *hw)
    _write_csv(out / "layers.csv", _provenance(cfg, seed),
               {"layer": names, "cycles": cycles_col, "energy_j": energy_col})
    total_c = sum(cycles_col)
    print(f"sim-layer: {len(layers)} layers, {total_c} cycles "
          f"({total_c / pipe.clock * 1e6:.2f} us at {pipe.clock / 1e6:.0f} MHz)")
    return EXIT_OK


# --- run-net -------------------------------------------------------------------


def _shard(payload):
    raw, images, labels, offset, macro, noise = payload
    bundle = ModelBundle.from_bytes(raw)
    res = run_network(bundle, images, macro=macro, noise=noise,
                      labels=labels, image_offset=offset)
    return res.scores, (res.oracle_predictions if res.oracle_predictions
                        is not None else None)


def cmd_run_net(args) -> int:
    cfg, macro, noise, seed, out = _context(args)
    bundle = ModelBundle.load(args.bundle)
    with np.load(args.images) as data:
        images = data["images"]
        labels = data["labels"] if "labels" in data else None
    if args.limit:
        images = images[:args.limit]
        labels = labels[:args.limit] if labels is not None else None

    plan = plan_mapping(bundle, macro)  # fail fast (exit 3) before compute
    jobs = max(1, args.jobs)
    if jobs == 1 or images.shape[0] < 2 * jobs:
        res = run_network(bundle, images, macro=macro, noise=noise,
                          labels=labels, pipe=cfg.pipeline())
        scores, oracle_pred = res.scores, res.oracle_predictions
    else:
        raw = bundle.to_bytes()
        bounds = np.linspace(0, images.shape[0], jobs + 1).astype(int)
        payloads = [(raw, images[a:b],
                     labels[a:b] if labels is not None else None,
                     int(a), macro, noise)
                    for a, b in zip(bounds, bounds[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_shard, payloads))
        scores = np.concatenate([p[0] for p in parts])
        oracle_pred = (np.concatenate([p[1] for p in parts])
                       if parts[0][1] is not None else None)

    pred = scores.argmax(axis=1)
    head = _provenance(cfg, seed)
    cols = {"image": np.arange(images.shape[0]), "prediction": pred}
    if labels is not None:
        cols["label"] = labels
    if oracle_pred is not None:
        cols["ideal_prediction"] = oracle_pred
    _write_csv(out / "predictions.csv", head, cols)

    msg = f"run-net: {images.shape[0]} images"
    if labels is not None:
        acc = float(np.mean(pred == labels))
        msg += f", accuracy {acc:.4f}"
        if oracle_pred is not None:
            msg += f" (ideal {float(np.mean(oracle_pred == labels)):.4f})"
    batches = sum(len(m.col_batches) for m in plan.layers)
    msg += f", {len(bundle.layers)} layers / {batches} column batches"
    print(msg)
    return EXIT_OK


# --- sweep ---------------------------------------------------------------------


def cmd_sweep(args) -> int:
    if not args.param:
        raise ConfigError("sweep needs at least one --param SEC.KEY=V1,V2,...")
    axes = []
    for item in args.param:
        if "=" not in item:
            raise ConfigError(f"--param needs SEC.KEY=V1,V2,..., got {item!r}")
        key, vals = item.split("=", 1)
        axes.append((key.strip(), [v.strip() for v in vals.split(",") if v]))

    rows = {key: [] for key, _ in axes}
    rows["metric"] = []
    rows["value"] = []
    cfg0 = None
    for combo in product(*(vals for _, vals in axes)):
        args_set = list(args.set) + [f"{k}={v}"
                                     for (k, _), v in zip(axes, combo)]
        sub = argparse.Namespace(**{**vars(args), "set": args_set})
        cfg = _load_config(sub)
        cfg0 = cfg0 or cfg
        macro, noise = cfg.macro(), cfg.noise()
        if args.metric == "rms":
            g = macro.adc.gamma
            val = characterize_rms(macro, noise, gammas=(g,),
                                   iters=args.iters,
                                   n_points=args.rms_points)["max_rms"][g]
        else:
            layers = cfg.layers()
            if not layers:
                raise ConfigError("metric=cycles needs [layer.N] sections")
            h, w = (int(x) for x in args.image_hw.split("x"))
            pipe = cfg.pipeline()
            val, hw = 0, (h, w)
            for lay in layers:
                if lay.kind == "conv":
                    ho, wo = out_hw(lay, *hw)
                    val += predict_cycles(lay, pipe, ho * wo, wo)
                    hw = (ho, wo)
                else:
                    val += predict_cycles(lay, pipe, 1, 1)
        for (k, _), v in zip(axes, combo):
            rows[k].append(v)
        rows["metric"].append(args.metric)
        rows["value"].append(val)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg0.get("noise", "seed", int, 0)
    _write_csv(out / "sweep.csv", _provenance(cfg0, seed), rows)
    print(f"sweep: {len(rows['value'])} points -> {out / 'sweep.csv'}")
    return EXIT_OK


# --- calibrate -----------------------------------------------------------------


def cmd_calibrate(args) -> int:
    cfg, macro, noise, seed, out = _context(args)
    cal = characterize_calibration(macro, samples=args.samples, seed=seed)
    _write_csv(out / "calibration.csv", _provenance(cfg, seed), {
        "column": np.arange(cal["offset"].size),
        "offset_v": cal["offset"],
        "pre_lsb8": cal["pre_lsb"],
        "post_lsb8": cal["post_lsb"],
        "residual_v": cal["residual_volts"],
        "flagged": cal["flagged"],
    })
    success = float(np.mean(np.abs(cal["post_lsb"]) <= 1.0))
    print(f"calibrate: {cal['offset'].size} columns, success {success:.3f}, "
          f"std {cal['pre_std_lsb']:.2f} -> {cal['post_std_lsb']:.2f} LSB")
    return EXIT_OK


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imagine-sim",
                                description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version",
                   version=f"imagine-sim {__version__}")
    sub = p.add_subparsers(dest="command")

    c = sub.add_parser("characterize", help="static macro sweeps")
    _add_common(c)
    c.add_argument("--gamma", default="1,4,16", help="comma-separated gains")
    c.add_argument("--iters", type=int, default=100)
    c.add_argument("--points", type=int, default=65)
    c.add_argument("--rms-points", type=int, default=33)
    c.add_argument("--cal-samples", type=int, default=1024)
    c.set_defaults(func=cmd_characterize)

    s = sub.add_parser("sim-layer", help="cycle/energy model for layers")
    _add_common(s)
    s.add_argument("--mode", choices=("serial", "pipelined"), default=None)
    s.add_argument("--image-hw", default="32x32")
    s.add_argument("--simulate", action="store_true",
                   help="run the full behavioral model, not just the "
                        "analytic cycle count")
    s.set_defaults(func=cmd_sim_layer)

    r = sub.add_parser("run-net", help="bundle inference")
    _add_common(r)
    r.add_argument("--bundle", required=True)
    r.add_argument("--images", required=True,
                   help="npz with 'images' (and optional 'labels')")
    r.add_argument("--limit", type=int, default=0)
    r.set_defaults(func=cmd_run_net)

    w = sub.add_parser("sweep", help="cartesian parameter sweep")
    _add_common(w)
    w.add_argument("--param", action="append", default=[],
                   metavar="SEC.KEY=V1,V2,...")
    w.add_argument("--metric", choices=("rms", "cycles"), default="cycles")
    w.add_argument("--iters", type=int, default=50)
    w.add_argument("--rms-points", type=int, default=17)
    w.add_argument("--image-hw", default="32x32")
    w.set_defaults(func=cmd_sweep)

    k = sub.add_parser("calibrate", help="offset calibration statistics")
    _add_common(k)
    k.add_argument("--samples", type=int, default=1024)
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (UnmappableError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNMAPPABLE
    except (ConfigError, BundleError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
