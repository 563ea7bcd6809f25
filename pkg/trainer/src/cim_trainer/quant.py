"""Quantization-aware layers that mirror the analog code transfer.

Each layer computes the same integer cross-correlation sum and affine
code mapping the hardware applies, with straight-through gradients
through every round/floor/clip so the float shadow weights keep
training.  Optional Gaussian code-domain noise reproduces the macro's
characterized output RMS during training.
"""

from __future__ import annotations

import torch
from torch import nn

from . import hw


class _RoundSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return torch.round(x)

    @staticmethod
    def backward(ctx, g):
        return g


class _FloorSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        return torch.floor(x)

    @staticmethod
    def backward(ctx, g):
        return g


def ste_round(x):
    return _RoundSTE.apply(x)


def ste_floor(x):
    return _FloorSTE.apply(x)


def clip_ste(x, lo, hi):
    """Hard clip with pass-through gradient inside the range."""
    return x + (torch.clamp(x, lo, hi) - x).detach()


class CimLinear(nn.Module):
    """Fully-connected layer evaluated in the hardware code domain.

    The float shadow weight w is quantized to the offset-binary integer
    grid (odd signed values 2q - (2^r_w - 1)); the bias shadow is
    quantized to the signed 5b offset-bank grid.  forward() maps input
    codes to output codes exactly as the analog chain does, up to the
    float/rational rounding that the exact exporter re-resolves.
    """

    def __init__(self, c_in: int, c_out: int, r_in: int = 8, r_w: int = 4,
                 r_out: int = 8, gamma: int = 1, relu: bool = False,
                 shift: int = 0, noise_sigma: float = 0.0,
                 noise_col_sigma: float = 0.0):
        super().__init__()
        if c_in > hw.MAX_ROWS:
            raise ValueError(f"{c_in} rows exceed the {hw.MAX_ROWS}-row array")
        self.c_in, self.c_out = c_in, c_out
        self.r_in, self.r_w, self.r_out = r_in, r_w, r_out
        self.gamma = gamma
        self.relu = relu
        self.shift = shift
        self.noise_sigma = noise_sigma
        self.noise_col_sigma = noise_col_sigma
        self.m_w = 2 ** r_w - 1
        # shadow weight parametrizes the signed hardware value directly;
        # spread the init over the whole grid so the analog swing (and
        # with it the gradient signal through the coarse code floor) is
        # large from the first step
        w = torch.empty(c_in, c_out)
        nn.init.uniform_(w, -self.m_w, self.m_w)
        self.weight = nn.Parameter(w)
        self.beta = nn.Parameter(torch.zeros(c_out))

    # --- quantizers -----------------------------------------------------

    def weight_codes(self) -> torch.Tensor:
        """Offset-binary integer weights in [0, 2^r_w)."""
        q = ste_round((clip_ste(self.weight, -self.m_w, self.m_w)
                       + self.m_w) / 2.0)
        return torch.clamp(q, 0, self.m_w)

    def signed_weights(self) -> torch.Tensor:
        return 2.0 * self.weight_codes() - self.m_w

    def beta_codes(self) -> torch.Tensor:
        return torch.clamp(ste_round(clip_ste(self.beta, -15.0, 15.0)),
                           -15, 15)

    # --- forward ---------------------------------------------------------

    def forward(self, x_codes: torch.Tensor) -> torch.Tensor:
        half = 2 ** (self.r_out - 1)
        S = x_codes @ self.signed_weights()
        A = hw.code_gain(self.c_in, self.r_in, self.r_w, self.r_out,
                         self.gamma)
        Bb = hw.beta_gain(self.r_out, self.gamma)
        arg = half + A * S + Bb * self.beta_codes()
        codes = clip_ste(ste_floor(arg), 0, 2 ** self.r_out - 1)
        if self.training and self.noise_sigma > 0:
            codes = codes + self.noise_sigma * torch.randn_like(codes)
        if self.training and self.noise_col_sigma > 0:
            # static per-column offsets (uncancelled sense-amp residuals)
            # resampled each batch, so no single column level is trusted
            codes = codes + self.noise_col_sigma * torch.randn(
                self.c_out, device=codes.device)
        return codes

    def activation(self, codes: torch.Tensor, next_r_in: int) -> torch.Tensor:
        half = 2 ** (self.r_out - 1)
        y = torch.relu(codes - half) if self.relu else codes
        if self.shift:
            y = ste_floor(y / 2 ** self.shift)
        return clip_ste(y, 0, 2 ** next_r_in - 1)
