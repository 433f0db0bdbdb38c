"""Training loops for the latent autoencoder and the score model.

Both loops are single-process, CPU-oriented and deterministic for a fixed
config seed: module init draws from the globally seeded generator, while
batch order and every noise draw come from a dedicated generator. Losses
are means over batch and elements, so coefficients keep their meaning when
batch size or resolution changes.

The autoencoder minimizes reconstruction error plus a KL penalty on the
reparameterized latent (per-dimension mean, weighted by ``kl_coeff``). The
score model minimizes denoising score matching with t drawn uniformly on
(eps_t, 1], noise scaled by beta(t), and the squared error taken on the
raw head output, which equals weighting the score error by beta(t)^2 and
keeps the objective bounded as t approaches 0.
"""
from __future__ import annotations

import dataclasses
import itertools

import numpy as np
import torch
from torch.nn import functional as F

from .config import TrainConfig
from .models import Decoder, Encoder, ScoreNet, beta_sq


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the step diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclasses.dataclass(frozen=True)
class AeEpoch:
    epoch: int
    loss: float
    recon: float
    kl: float
    lr: float


@dataclasses.dataclass(frozen=True)
class ScoreEpoch:
    epoch: int
    loss: float
    lr: float


@dataclasses.dataclass
class AutoencoderResult:
    encoder: Encoder
    decoder: Decoder
    history: list[AeEpoch]
    config: TrainConfig
    channel_ranges: list[list[float]]


@dataclasses.dataclass
class ScoreResult:
    model: ScoreNet
    history: list[ScoreEpoch]
    config: TrainConfig


def _check_finite(loss_value: float, where: dict) -> None:
    if not np.isfinite(loss_value):
        raise TrainingDiverged("non-finite training loss", where)


def _epoch_batches(n: int, batch_size: int, gen: torch.Generator):
    perm = torch.randperm(n, generator=gen)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def train_autoencoder(
    cfg: TrainConfig,
    data: np.ndarray,
    channel_ranges: list[list[float]],
) -> AutoencoderResult:
    """Fit encoder and decoder on a normalized (N, C, H, W) stack."""
    expect = (cfg.channels,) + cfg.map_shape
    if data.ndim != 4 or data.shape[1:] != expect:
        raise ValueError(f"data shaped {data.shape}, config expects (N,) + {expect}")
    if len(channel_ranges) != cfg.channels:
        raise ValueError("one [lo, hi] range per channel required")

    torch.manual_seed(cfg.seed)
    encoder = Encoder(cfg.channels).to(memory_format=torch.channels_last)
    decoder = Decoder(cfg.channels).to(memory_format=torch.channels_last)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(
        itertools.chain(encoder.parameters(), decoder.parameters()), lr=cfg.lr
    )
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_decay)
    x_all = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))

    history: list[AeEpoch] = []
    for epoch in range(cfg.epochs):
        # Warm the KL coefficient in linearly so early epochs push
        # information into the latent before the rate penalty bites.
        if cfg.kl_warmup_epochs:
            coeff = cfg.kl_coeff * min(1.0, (epoch + 1) / cfg.kl_warmup_epochs)
        else:
            coeff = cfg.kl_coeff
        sums = np.zeros(3)
        seen = 0
        for step, idx in enumerate(_epoch_batches(len(x_all), cfg.batch_size, gen)):
            x = x_all[idx].to(memory_format=torch.channels_last)
            mu, logvar = encoder(x)
            noise = torch.randn(mu.shape, generator=gen)
            z = mu + torch.exp(0.5 * logvar) * noise
            y = decoder(z)
            recon = F.mse_loss(y, x)
            kl = 0.5 * torch.mean(mu.pow(2) + logvar.exp() - 1.0 - logvar)
            loss = recon + coeff * kl
            loss_v, recon_v, kl_v = (
                float(v.detach()) for v in (loss, recon, kl)
            )
            _check_finite(
                loss_v,
                {
                    "stage": "autoencoder",
                    "epoch": epoch,
                    "step": step,
                    "recon": recon_v,
                    "kl": kl_v,
                    "lr": sched.get_last_lr()[0],
                },
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += len(idx) * np.array([loss_v, recon_v, kl_v])
            seen += len(idx)
        history.append(
            AeEpoch(epoch, *(float(v) for v in sums / seen), lr=sched.get_last_lr()[0])
        )
        sched.step()
    return AutoencoderResult(encoder, decoder, history, cfg, channel_ranges)


def encode_dataset(
    encoder: Encoder, data: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Latent means of a normalized stack, as (N, H, W) float32."""
    encoder.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            x = torch.from_numpy(data[start : start + batch_size])
            out.append(encoder(x)[0][:, 0].numpy())
    encoder.train()
    return np.concatenate(out).astype(np.float32)


def reconstruction_rmse(
    encoder: Encoder, decoder: Decoder, data: np.ndarray, batch_size: int = 64
) -> float:
    """Pooled RMSE of mean-latent reconstructions in normalized units."""
    encoder.eval()
    decoder.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            x = torch.from_numpy(data[start : start + batch_size])
            y = decoder(encoder(x)[0])
            total += float(torch.sum((y - x) ** 2))
            count += x.numel()
    encoder.train()
    decoder.train()
    return float(np.sqrt(total / count))


def train_score_model(cfg: TrainConfig, latents: np.ndarray) -> ScoreResult:
    """Fit the score net on an (N, H, W) stack of encoded latents."""
    if latents.ndim != 3 or latents.shape[1:] != cfg.latent:
        raise ValueError(
            f"latents shaped {latents.shape}, config expects (N,) + {cfg.latent}"
        )
    torch.manual_seed(cfg.seed)
    fourier_w = 30.0 * torch.randn(256)
    model = ScoreNet(fourier_w, cfg.sigma_d).to(memory_format=torch.channels_last)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_decay)
    z_all = torch.from_numpy(
        np.ascontiguousarray(latents, dtype=np.float32)
    )[:, None]

    history: list[ScoreEpoch] = []
    for epoch in range(cfg.epochs):
        total = 0.0
        seen = 0
        for step, idx in enumerate(_epoch_batches(len(z_all), cfg.batch_size, gen)):
            z0 = z_all[idx].to(memory_format=torch.channels_last)
            u = torch.rand(len(idx), generator=gen)
            t = cfg.eps_t + (1.0 - cfg.eps_t) * (1.0 - u)
            beta = torch.sqrt(beta_sq(t, cfg.sigma_d))
            xi = torch.randn(z0.shape, generator=gen)
            z_t = z0 + beta[:, None, None, None] * xi
            raw = model(z_t, t)
            loss = torch.mean((raw + xi) ** 2)
            loss_v = float(loss.detach())
            _check_finite(
                loss_v,
                {
                    "stage": "score",
                    "epoch": epoch,
                    "step": step,
                    "lr": sched.get_last_lr()[0],
                },
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += len(idx) * loss_v
            seen += len(idx)
        history.append(ScoreEpoch(epoch, total / seen, sched.get_last_lr()[0]))
        sched.step()
    return ScoreResult(model, history, cfg)
