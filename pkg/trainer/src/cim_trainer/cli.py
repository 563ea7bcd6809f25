"""Training/export command line.

    cim-train --scheme mlp --noise-spec hw_noise_spec.csv \
              --data mnist.npz --out run1/ --epochs 4 --seed 0

Trains the quantized MLP (noise-aware unless --blind), exports the
model bundle with self-verification, and writes a JSON report with the
integer-simulation accuracy.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import intsim
from .export import export_bundle
from .hw import HwNoiseSpec
from .model import QuantScheme, train


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cim-train")
    p.add_argument("--scheme", default="mlp",
                   help="'mlp' or 'mlp:r_out=6,r_w=2'")
    p.add_argument("--noise-spec", default=None,
                   help="characterization CSV from the simulator")
    p.add_argument("--data", required=True, help="npz with train/test splits")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-scale", type=float, default=4.0,
                   help="margin over the characterized noise envelope")
    p.add_argument("--blind", action="store_true",
                   help="train without injected hardware noise")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scheme = QuantScheme.parse(args.scheme)
        spec = None
        if args.noise_spec and not args.blind:
            spec = HwNoiseSpec.from_csv(args.noise_spec)
        data = np.load(args.data)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)

        res = train(scheme, data["train_images"], data["train_labels"],
                    epochs=args.epochs, noise_spec=spec,
                    noise_scale=args.noise_scale, seed=args.seed,
                    val=(data["test_images"], data["test_labels"]))
        layers = res.model.int_layers()
        bundle_path = out / "model.cimb"
        export_bundle(layers, bundle_path,
                      verify_images=data["test_images"][:100])
        acc = intsim.accuracy(layers, data["test_images"],
                              data["test_labels"])
        report = {"scheme": args.scheme, "seed": args.seed,
                  "epochs": args.epochs, "noise_aware": spec is not None,
                  "gammas": [l.gamma for l in layers],
                  "int_test_accuracy": acc, "history": res.history,
                  "bundle": bundle_path.name}
        (out / "report.json").write_text(json.dumps(report, indent=2))
        print(f"trained {args.scheme}: integer test accuracy {acc:.4f}, "
              f"bundle {bundle_path}")
        return 0
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
