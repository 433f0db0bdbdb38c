"""Torch modules matching the inference networks layer for layer.

The inference side (ispnp.nets) runs plain numpy forward passes over named
f32 tensors. Every module here uses the same submodule names, so a
state_dict key maps onto a container tensor name by suffix substitution
alone, and the same arithmetic, so exported weights produce identical
outputs up to floating-point reassociation.

Pinned choices the parity tests enforce:
  - 3x3 convolutions, zero padding 1, stride 1 or 2
  - group norm over pairs of channels (max(c // 2, 1) groups), eps 1e-5
  - nearest-neighbor 2x upsampling
  - SiLU activations, residual branches scaled by 0.1
"""
from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F


def conv3(c_in: int, c_out: int, stride: int = 1) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)


def gnorm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(max(c // 2, 1), c, eps=1e-5)


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def beta_sq(t: torch.Tensor, sigma_d: float) -> torch.Tensor:
    """Accumulated perturbation variance of the variance-exploding SDE."""
    log_s = math.log(sigma_d)
    return (torch.exp(2.0 * t * log_s) - 1.0) / (2.0 * log_s)


class Head(nn.Module):
    """conv-SiLU-conv-SiLU-conv, no normalization."""

    def __init__(self, c0: int, c1: int, c2: int, c3: int):
        super().__init__()
        self.conv1 = conv3(c0, c1)
        self.conv2 = conv3(c1, c2)
        self.conv3 = conv3(c2, c3)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv3(F.silu(self.conv2(F.silu(self.conv1(x)))))


class EncBlock(nn.Module):
    """Halve the spatial dims: residual trunk, then two stride-2 exits."""

    def __init__(self, c_in: int, c: int):
        super().__init__()
        self.conv1 = conv3(c_in, c)
        self.gn1 = gnorm(c)
        self.conv2 = conv3(c, c)
        self.gn2 = gnorm(c)
        self.conv3 = conv3(c, c)
        self.gn3 = gnorm(c)
        self.conv4 = conv3(c, c)
        self.conv5 = conv3(c, c)
        self.down1 = conv3(c, c, stride=2)
        self.down2 = conv3(c, c, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1 = F.silu(self.gn1(self.conv1(x)))
        x2 = F.silu(self.gn3(self.conv3(F.silu(self.gn2(self.conv2(x1))))))
        xr = x1 + 0.1 * x2
        d2 = F.silu(self.conv5(F.silu(self.conv4(xr))))
        return self.down1(xr) + 0.1 * self.down2(d2)


class DecBlock(nn.Module):
    """Double the spatial dims: residual trunk, shared upsample, two exits."""

    def __init__(self, c_in: int, c: int):
        super().__init__()
        self.conv1 = conv3(c_in, 2 * c)
        self.gn1 = gnorm(2 * c)
        self.conv2 = conv3(2 * c, 2 * c)
        self.gn2 = gnorm(2 * c)
        self.conv3 = conv3(2 * c, 2 * c)
        self.gn3 = gnorm(2 * c)
        self.up1 = conv3(2 * c, c)
        self.up2 = conv3(2 * c, c)
        self.conv4 = conv3(c, c)
        self.conv5 = conv3(c, c)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x1 = F.silu(self.gn1(self.conv1(x)))
        x2 = F.silu(self.gn3(self.conv3(F.silu(self.gn2(self.conv2(x1))))))
        xr = x1 + 0.1 * x2
        u = upsample2x(xr)
        a5 = self.conv4(F.silu(self.up2(u)))
        return self.up1(u) + 0.1 * self.conv5(F.silu(a5))


class DsBlock(nn.Module):
    """Time-conditioned downsampling stage; returns (skip, halved)."""

    def __init__(self, c_in: int, c: int):
        super().__init__()
        self.conv1 = conv3(c_in, c)
        self.gn1 = gnorm(c)
        self.conv2 = conv3(c, c)
        self.gn2 = gnorm(c)
        self.temb = nn.Linear(512, c)
        self.conv3 = conv3(c, c)
        self.gn3 = gnorm(c)
        self.conv4 = conv3(c, c)
        self.gn4 = gnorm(c)
        self.down = conv3(c, c, stride=2)

    def forward(self, x, v):
        x = F.silu(self.gn2(self.conv2(F.silu(self.gn1(self.conv1(x))))))
        x = x + self.temb(v)[:, :, None, None]
        skip = F.silu(self.gn4(self.conv4(F.silu(self.gn3(self.conv3(x))))))
        return skip, F.silu(self.down(skip))


class UsBlock(nn.Module):
    """Time-conditioned upsampling stage; concatenates its skip input."""

    def __init__(self, c_in: int, c: int):
        super().__init__()
        self.conv1 = conv3(c_in, 2 * c)
        self.gn1 = gnorm(2 * c)
        self.conv2 = conv3(2 * c, 2 * c)
        self.gn2 = gnorm(2 * c)
        self.temb = nn.Linear(512, 2 * c)
        self.conv3 = conv3(2 * c, 2 * c)
        self.gn3 = gnorm(2 * c)
        self.conv4 = conv3(2 * c, 2 * c)
        self.gn4 = gnorm(2 * c)
        self.up = conv3(2 * c, c)

    def forward(self, x, skip, v):
        x = F.silu(self.gn2(self.conv2(F.silu(self.gn1(self.conv1(x))))))
        x = x + self.temb(v)[:, :, None, None]
        x = F.silu(self.gn4(self.conv4(F.silu(self.gn3(self.conv3(x))))))
        x = F.silu(self.up(upsample2x(x)))
        return torch.cat([x, skip], dim=1)


class Encoder(nn.Module):
    """Property channels -> latent mean and log-variance, 4x downsampled.

    Inference uses the mean head only; the variance head exists for the
    reparameterization draw during training and rides along in the
    container as extra tensors.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.enc1 = EncBlock(channels, 16)
        self.enc2 = EncBlock(16, 64)
        self.enc_mu = Head(64, 32, 16, 1)
        self.enc_var = Head(64, 32, 16, 1)
        # Start the posterior narrow (std ~ e^-2) so the decoder trains on
        # signal-dominated draws; a unit-variance start makes early epochs
        # fit the dataset mean and stalls edge formation.
        nn.init.constant_(self.enc_var.conv3.bias, -4.0)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.enc2(self.enc1(x))
        return self.enc_mu(h), self.enc_var(h)


class Decoder(nn.Module):
    """Latent map -> property channels on the 4x grid, [-1, 1] units."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.dec_in = Head(1, 16, 32, 64)
        self.dec2 = DecBlock(64, 16)
        self.dec1 = DecBlock(16, channels)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.dec1(self.dec2(self.dec_in(z)))


class ScoreNet(nn.Module):
    """Latent-space score model: U-net over three halvings, time-embedded.

    The forward pass returns the raw head output; the score of the
    perturbed density is that output divided by beta(t), which ``score``
    applies. ``fourier_w`` is drawn once at construction and frozen; it is
    carried in the container metadata, not as a tensor.
    """

    def __init__(self, fourier_w: torch.Tensor, sigma_d: float):
        super().__init__()
        if fourier_w.shape != (256,):
            raise ValueError(f"need 256 frequencies, got {tuple(fourier_w.shape)}")
        if not sigma_d > 1.0:
            raise ValueError(f"sigma_d must exceed 1, got {sigma_d}")
        self.sigma_d = float(sigma_d)
        self.register_buffer("fourier_w", fourier_w.detach().clone())
        self.temb = nn.Module()
        self.temb.dense = nn.Linear(512, 512)
        self.ds1 = DsBlock(1, 32)
        self.ds2 = DsBlock(32, 64)
        self.ds3 = DsBlock(64, 128)
        self.us3 = UsBlock(128, 128)
        self.us2 = UsBlock(256, 64)
        self.us1 = UsBlock(128, 32)
        self.out = Head(64, 64, 64, 1)

    def forward(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        arg = 2.0 * math.pi * t[:, None] * self.fourier_w[None, :]
        v = F.silu(self.temb.dense(torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)))
        s1, x = self.ds1(z, v)
        s2, x = self.ds2(x, v)
        s3, x = self.ds3(x, v)
        x = self.us3(x, s3, v)
        x = self.us2(x, s2, v)
        x = self.us1(x, s1, v)
        return self.out(x)

    def score(self, z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        b = torch.sqrt(beta_sq(t, self.sigma_d))
        return self(z, t) / b[:, None, None, None]
