"""End-to-end trainer -> accelerator runtime checks.

The trainer talks to the accelerator simulator only through its
external interfaces: the characterization CSV it reads, the bundle file
it writes, and the `imagine-sim run-net` command line.  These tests
exercise that full loop, including the paired noise-aware vs
noise-blind comparison.
"""

import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cim_trainer import intsim
from cim_trainer.export import export_bundle
from cim_trainer.hw import HwNoiseSpec
from cim_trainer.model import QuantScheme, train

DATA = Path(__file__).parents[2] / "data" / "mnist.npz"
SPEC_CSV = Path(__file__).parent / "data" / "hw_noise_spec.csv"

NOISY_SUBSET = 300
NOISE_SEED = 1


def _run_net(bundle, images_npz, out_dir, *extra):
    cmd = ["imagine-sim", "run-net", "--bundle", str(bundle),
           "--images", str(images_npz), "--out", str(out_dir), *extra]
    res = subprocess.run(cmd, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    with open(Path(out_dir) / "predictions.csv", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    head, body = rows[0], rows[1:]
    cols = {name: np.array([r[i] for r in body], dtype=np.int64)
            for i, name in enumerate(head)}
    return cols


@pytest.fixture(scope="session")
def mnist():
    d = np.load(DATA)
    return {k: d[k] for k in d.files}


@pytest.fixture(scope="session")
def twins(mnist, tmp_path_factory):
    """Noise-aware and noise-blind models, identical but for the noise."""
    root = tmp_path_factory.mktemp("twins")
    spec = HwNoiseSpec.from_csv(SPEC_CSV)
    out = {}
    for tag, ns in (("aware", spec), ("blind", None)):
        res = train(QuantScheme(), mnist["train_images"],
                    mnist["train_labels"], noise_spec=ns, seed=0)
        path = root / f"{tag}.cimb"
        export_bundle(res.model.int_layers(), path,
                      verify_images=mnist["test_images"][:100])
        out[tag] = {"layers": res.model.int_layers(), "bundle": path}
    eval_npz = root / "eval.npz"
    np.savez(eval_npz, images=mnist["test_images"],
             labels=mnist["test_labels"])
    out["eval_npz"] = eval_npz
    out["root"] = root
    return out


@pytest.fixture(scope="session")
def noisy_runs(twins):
    """Default-noise run-net predictions for both twins (expensive)."""
    out = {}
    for tag in ("aware", "blind"):
        out[tag] = _run_net(twins[tag]["bundle"], twins["eval_npz"],
                            twins["root"] / f"noisy_{tag}",
                            "--limit", str(NOISY_SUBSET),
                            "--seed", str(NOISE_SEED))
    return out


def test_untrained_network_is_chance_level(mnist):
    res = train(QuantScheme(), mnist["train_images"][:512],
                mnist["train_labels"][:512], epochs=0, pretrain_epochs=0)
    acc = intsim.accuracy(res.model.int_layers(), mnist["test_images"],
                          mnist["test_labels"])
    assert acc < 0.3


def test_runtime_matches_integer_sim_bit_exactly(twins, mnist):
    """criterion 11: ideal-mode runtime accuracy == trainer integer sim."""
    layers = twins["aware"]["layers"]
    int_pred = intsim.predict(layers, mnist["test_images"])
    int_acc = float(np.mean(int_pred == mnist["test_labels"]))
    cols = _run_net(twins["aware"]["bundle"], twins["eval_npz"],
                    twins["root"] / "ideal", "--set", "noise.enabled=false")
    run_acc = float(np.mean(cols["prediction"] == cols["label"]))
    assert np.array_equal(cols["prediction"], int_pred)
    assert run_acc == int_acc
    assert int_acc >= 0.95


def test_noise_injected_accuracy_close_to_ideal(twins, noisy_runs, mnist):
    """criterion 11: default-noise accuracy within 2 points of ideal."""
    layers = twins["aware"]["layers"]
    n = NOISY_SUBSET
    ideal_acc = intsim.accuracy(layers, mnist["test_images"][:n],
                                mnist["test_labels"][:n])
    cols = noisy_runs["aware"]
    noisy_acc = float(np.mean(cols["prediction"] == cols["label"]))
    assert noisy_acc >= ideal_acc - 0.02
    # the runtime reports the exact-oracle predictions alongside
    assert np.array_equal(cols["ideal_prediction"],
                          intsim.predict(layers, mnist["test_images"][:n]))


def test_noise_aware_beats_noise_blind(noisy_runs):
    """criterion 12: >= 1 accuracy point from noise-aware training."""
    accs = {tag: float(np.mean(c["prediction"] == c["label"]))
            for tag, c in noisy_runs.items()}
    assert accs["aware"] >= accs["blind"] + 0.01
