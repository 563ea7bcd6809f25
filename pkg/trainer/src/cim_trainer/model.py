"""The reference MLP and its training loop.

A 784-512-128-10 network of code-domain quantized layers, trained with
cross-entropy on the (code - mid-rail) logits.  Per-layer conversion
gains are auto-calibrated on the first batch so the analog swing fills
the converter range without saturating, then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import hw, intsim
from .quant import CimLinear


@dataclass
class QuantScheme:
    """Per-layer precisions of the exported network."""

    hidden: tuple = (512, 128)
    r_in: int = 8                   # input-image code precision
    r_act: int = 1                  # hidden-activation precision
    r_w: int = 4
    r_out: int = 8
    gammas: tuple | None = None     # None -> auto-calibrated
    shifts: tuple | None = None

    def r_ins(self) -> tuple:
        """Per-layer input precision: pixels first, then activations."""
        return (self.r_in,) + (self.r_act,) * len(self.hidden)

    @classmethod
    def parse(cls, text: str) -> "QuantScheme":
        """'mlp' or 'mlp:r_out=6,r_w=2' style scheme strings."""
        kw = {}
        if ":" in text:
            text, opts = text.split(":", 1)
            for item in opts.split(","):
                k, v = item.split("=")
                kw[k] = int(v)
        if text != "mlp":
            raise ValueError(f"unknown scheme {text!r}")
        return cls(**kw)


class QuantMlp(nn.Module):
    def __init__(self, scheme: QuantScheme, noise_sigmas=None):
        super().__init__()
        dims = (784, *scheme.hidden, 10)
        n = len(dims) - 1
        gammas = scheme.gammas or (1,) * n
        shifts = scheme.shifts or (0,) * n
        sigmas = noise_sigmas or (0.0,) * n
        r_ins = scheme.r_ins()
        self.layers = nn.ModuleList(
            CimLinear(dims[i], dims[i + 1], r_in=r_ins[i],
                      r_w=scheme.r_w, r_out=scheme.r_out, gamma=gammas[i],
                      relu=i < n - 1, shift=shifts[i],
                      noise_sigma=sigmas[i])
            for i in range(n))
        self.scheme = scheme

    def forward(self, x_codes: torch.Tensor) -> torch.Tensor:
        for i, lay in enumerate(self.layers):
            codes = lay(x_codes)
            if i == len(self.layers) - 1:
                return codes
            x_codes = lay.activation(codes, self.layers[i + 1].r_in)
        return codes

    def logits(self, x_codes: torch.Tensor) -> torch.Tensor:
        half = 2 ** (self.layers[-1].r_out - 1)
        return 0.25 * (self(x_codes) - half)

    # --- gain calibration -------------------------------------------------

    @torch.no_grad()
    def calibrate_gammas(self, x_codes: torch.Tensor) -> None:
        """Pick each layer's largest gain that keeps the 99.9th-percentile
        swing inside the converter range on a calibration batch."""
        for i, lay in enumerate(self.layers):
            half = 2 ** (lay.r_out - 1)
            S = x_codes @ lay.signed_weights()
            a1 = hw.code_gain(lay.c_in, lay.r_in, lay.r_w, lay.r_out, 1)
            peak = float(torch.quantile(torch.abs(a1 * S), 0.999))
            gamma = 1
            for g in hw.SUPPORTED_GAMMAS:
                if g * peak <= half - 1:
                    gamma = g
            lay.gamma = gamma
            codes = lay(x_codes)
            if i < len(self.layers) - 1:
                x_codes = lay.activation(codes, self.layers[i + 1].r_in)

    # --- integer view ------------------------------------------------------

    def int_layers(self) -> list:
        out = []
        with torch.no_grad():
            for lay in self.layers:
                out.append(intsim.IntLayer(
                    weights=lay.weight_codes().numpy().astype(np.int64),
                    r_in=lay.r_in, r_w=lay.r_w, r_out=lay.r_out,
                    gamma=lay.gamma,
                    beta=lay.beta_codes().numpy().astype(np.int64),
                    relu=lay.relu, shift=lay.shift))
        return out


@dataclass
class TrainResult:
    model: QuantMlp
    history: list = field(default_factory=list)
    test_accuracy: float | None = None


def _shift_batch(xb: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random +/-2 pixel translation of a batch of 28x28 images.

    The images are centered, so wrap-around rolls only move background
    pixels; this is a cheap augmentation that the small training set
    needs to generalize.
    """
    dy = int(torch.randint(-2, 3, (), generator=gen))
    dx = int(torch.randint(-2, 3, (), generator=gen))
    if dx == 0 and dy == 0:
        return xb
    img = xb.view(-1, 28, 28).roll(shifts=(dy, dx), dims=(1, 2))
    return img.reshape(-1, 784)


class _StepSTE(torch.autograd.Function):
    """Hard 0/1 threshold with the usual clipped pass-through gradient."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return (x > 0).to(x.dtype)

    @staticmethod
    def backward(ctx, g):
        (x,) = ctx.saved_tensors
        return g * (x.abs() <= 1).to(g.dtype)


class _BinAct(nn.Module):
    def forward(self, x):
        return _StepSTE.apply(x)


def _pretrain_float(dims, x, y, epochs, batch, lr, gen, binary_act):
    """Unconstrained float MLP warm-up; returns per-layer weights.

    A network quantized from random init has almost no code swing, so
    the floored forward pass carries no signal.  Warm-starting from a
    float solution puts the quantized model straight into a regime
    where the converter range is actually used.  With binary hidden
    activations the warm-up uses the same hard threshold (around zero,
    which is where the mid-rail code threshold lands after conversion).
    """
    mods = []
    for i in range(len(dims) - 1):
        mods.append(nn.Linear(dims[i], dims[i + 1], bias=False))
        if i < len(dims) - 2:
            mods.append(_BinAct() if binary_act else nn.ReLU())
    net = nn.Sequential(*mods)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    xs = x / 255.0
    for _ in range(epochs):
        order = torch.randperm(len(x), generator=gen)
        for s in range(0, len(x), batch):
            idx = order[s:s + batch]
            opt.zero_grad()
            loss_fn(net(_shift_batch(xs[idx], gen)), y[idx]).backward()
            opt.step()
    return [m.weight.detach().t().contiguous()
            for m in net if isinstance(m, nn.Linear)]


def train(scheme: QuantScheme, images: np.ndarray, labels: np.ndarray,
          epochs: int = 6, noise_spec: hw.HwNoiseSpec | None = None,
          noise_scale: float = 4.0, seed: int = 0, batch: int = 128,
          lr: float = 0.002, val: tuple | None = None,
          pretrain_epochs: int = 15) -> TrainResult:
    """images: (N, 784) uint8 codes; labels: (N,) ints.

    noise_scale inflates the characterized Gaussian envelope during
    training: the measured RMS understates tail events (columns whose
    offset exceeds the calibration range), and training against a
    few-sigma margin costs almost no clean accuracy.
    """
    torch.manual_seed(seed)
    model = QuantMlp(scheme)
    x = torch.as_tensor(images, dtype=torch.float32)
    y = torch.as_tensor(labels, dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    dims = (784, *scheme.hidden, 10)
    floats = _pretrain_float(dims, x, y, pretrain_epochs, batch, 1e-3, gen,
                             binary_act=scheme.r_act == 1)
    with torch.no_grad():
        for lay, w in zip(model.layers, floats):
            # rescale each float weight matrix onto the signed hardware
            # grid; the per-layer positive scale is absorbed by the
            # scale-invariant relu chain and the final argmax
            s = lay.m_w / float(torch.quantile(torch.abs(w), 0.95))
            lay.weight.copy_(torch.clamp(w * s, -lay.m_w, lay.m_w))
    model.calibrate_gammas(x[: min(512, len(x))])
    if noise_spec is not None:
        for lay in model.layers:
            lay.noise_sigma = noise_scale * noise_spec.rms_for(lay.gamma)
            lay.noise_col_sigma = (noise_scale *
                                   noise_spec.sa_residual_sigma_lsb8)

    # one offset-bank step moves the output by several codes, so the
    # offsets get a much smaller step size than the weights
    opt = torch.optim.Adam(
        [{"params": [l.weight for l in model.layers]},
         {"params": [l.beta for l in model.layers], "lr": lr / 20.0}],
        lr=lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=2, gamma=0.5)
    loss_fn = nn.CrossEntropyLoss()
    history = []
    for epoch in range(epochs):
        model.train()
        order = torch.randperm(len(x), generator=gen)
        total, seen = 0.0, 0
        for s in range(0, len(x), batch):
            idx = order[s:s + batch]
            opt.zero_grad()
            loss = loss_fn(model.logits(_shift_batch(x[idx], gen)), y[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            seen += len(idx)
        sched.step()
        entry = {"epoch": epoch, "loss": total / seen,
                 "gammas": [l.gamma for l in model.layers]}
        if val is not None:
            entry["val_accuracy"] = intsim.accuracy(model.int_layers(), *val)
        history.append(entry)
    model.eval()
    res = TrainResult(model=model, history=history)
    if val is not None:
        res.test_accuracy = history[-1]["val_accuracy"]
    return res
