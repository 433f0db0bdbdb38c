"""Forward passes of the encoder, decoder and score networks, plus the
decoder's reverse mode.

Shapes are fixed by the container metadata: the encoder maps C property
channels on a (4N_u, 4N_v) grid down to an (N_u, N_v) latent through two
stride-2 blocks and a mean head; the decoder inverts that path with two
nearest-upsampling blocks; the score U-Net preserves the latent shape
across three downsampling and three upsampling stages with skip
concatenation, conditioned on a Gaussian Fourier time embedding, and its
output is divided by the diffusion scale beta(t).

All arithmetic runs in float64 on f32-stored weights. The decoder VJP
replays the forward pass on a tape and walks it backwards; it is exact, so
finite differences of `run_decoder` converge to it.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from ..priors import SDESchedule
from ..scene import PropertyMaps
from .container import WeightsContainer
from .layers import (
    conv2d,
    conv2d_vjp_input,
    dense,
    group_norm,
    group_norm_vjp_input,
    silu,
    silu_vjp,
    upsample2x,
    upsample2x_vjp,
)


def _check_arch(w: WeightsContainer, tag: str) -> None:
    if w.arch != tag:
        raise ValueError(f"container holds {w.arch!r} weights, expected {tag!r}")


def _p(w: WeightsContainer, prefix: str) -> dict[str, np.ndarray]:
    """One block's tensors as float64, keyed by their local names."""
    pre = prefix + "."
    return {
        name[len(pre) :]: w.tensors[name].astype(float)
        for name in w.tensors
        if name.startswith(pre)
    }


def normalize_channels(maps: PropertyMaps, ranges: np.ndarray) -> np.ndarray:
    """Stack maps into (C, H, W), each channel's [lo, hi] mapped onto [-1, 1]."""
    chans = (maps.eps_r, maps.sigma_e)
    out = np.empty((len(ranges),) + maps.shape)
    for c, (lo, hi) in enumerate(ranges):
        out[c] = 2.0 * (chans[c] - lo) / (hi - lo) - 1.0
    return out


def denormalize_channels(y: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Inverse of normalize_channels on a (C, H, W) array."""
    out = np.empty_like(y)
    for c, (lo, hi) in enumerate(ranges):
        out[c] = lo + (y[c] + 1.0) * 0.5 * (hi - lo)
    return out


def _head_fwd(x, p, tape=None):
    """conv-SiLU-conv-SiLU-conv, no normalization."""
    a1 = conv2d(x, p["conv1.w"], p["conv1.b"])
    a2 = conv2d(silu(a1), p["conv2.w"], p["conv2.b"])
    out = conv2d(silu(a2), p["conv3.w"], p["conv3.b"])
    if tape is not None:
        tape.append((a1, a2))
    return out


def _head_bwd(g, p, saved):
    a1, a2 = saved
    g = conv2d_vjp_input(g, p["conv3.w"])
    g = conv2d_vjp_input(silu_vjp(a2, g), p["conv2.w"])
    return conv2d_vjp_input(silu_vjp(a1, g), p["conv1.w"])


def _norm_conv(x, p, i):
    return silu(
        group_norm(
            conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"]),
            p[f"gn{i}.g"],
            p[f"gn{i}.b"],
        )
    )


def _enc_block_fwd(x, p):
    """Halve the spatial dims: residual trunk, then two stride-2 exits."""
    x1 = _norm_conv(x, p, 1)
    x2 = _norm_conv(_norm_conv(x1, p, 2), p, 3)
    xr = x1 + 0.1 * x2
    d2 = silu(
        conv2d(
            silu(conv2d(xr, p["conv4.w"], p["conv4.b"])),
            p["conv5.w"],
            p["conv5.b"],
        )
    )
    return conv2d(xr, p["down1.w"], p["down1.b"], stride=2) + 0.1 * conv2d(
        d2, p["down2.w"], p["down2.b"], stride=2
    )


def _dec_block_fwd(x, p, tape=None):
    """Double the spatial dims: residual trunk, shared upsample, two exits."""
    a1 = conv2d(x, p["conv1.w"], p["conv1.b"])
    n1 = group_norm(a1, p["gn1.g"], p["gn1.b"])
    x1 = silu(n1)
    a2 = conv2d(x1, p["conv2.w"], p["conv2.b"])
    n2 = group_norm(a2, p["gn2.g"], p["gn2.b"])
    a3 = conv2d(silu(n2), p["conv3.w"], p["conv3.b"])
    n3 = group_norm(a3, p["gn3.g"], p["gn3.b"])
    xr = x1 + 0.1 * silu(n3)
    u = upsample2x(xr)
    a4 = conv2d(u, p["up2.w"], p["up2.b"])
    a5 = conv2d(silu(a4), p["conv4.w"], p["conv4.b"])
    out = conv2d(u, p["up1.w"], p["up1.b"]) + 0.1 * conv2d(
        silu(a5), p["conv5.w"], p["conv5.b"]
    )
    if tape is not None:
        tape.append((a1, n1, a2, n2, a3, n3, a4, a5))
    return out


def _dec_block_bwd(g, p, saved):
    a1, n1, a2, n2, a3, n3, a4, a5 = saved
    g5 = conv2d_vjp_input(0.1 * g, p["conv5.w"])
    g4 = conv2d_vjp_input(silu_vjp(a5, g5), p["conv4.w"])
    du = conv2d_vjp_input(g, p["up1.w"]) + conv2d_vjp_input(
        silu_vjp(a4, g4), p["up2.w"]
    )
    dxr = upsample2x_vjp(du)
    dn3 = silu_vjp(n3, 0.1 * dxr)
    dx2 = conv2d_vjp_input(group_norm_vjp_input(dn3, a3, p["gn3.g"]), p["conv3.w"])
    dn2 = silu_vjp(n2, dx2)
    dx1 = dxr + conv2d_vjp_input(
        group_norm_vjp_input(dn2, a2, p["gn2.g"]), p["conv2.w"]
    )
    dn1 = silu_vjp(n1, dx1)
    return conv2d_vjp_input(group_norm_vjp_input(dn1, a1, p["gn1.g"]), p["conv1.w"])


def _decoder_normalized(w: WeightsContainer, z: np.ndarray, tape=None) -> np.ndarray:
    x = z[None, None, :, :]
    x = _head_fwd(x, _p(w, "dec_in"), tape)
    x = _dec_block_fwd(x, _p(w, "dec2"), tape)
    return _dec_block_fwd(x, _p(w, "dec1"), tape)


def run_decoder(w: WeightsContainer, z: np.ndarray) -> PropertyMaps:
    """Latent (N_u, N_v) -> property maps on the (4N_u, 4N_v) grid."""
    _check_arch(w, "decoder")
    z = np.asarray(z, dtype=float)
    if z.shape != w.latent:
        raise ValueError(f"latent shape {z.shape}, container declares {w.latent}")
    y = _decoder_normalized(w, z)[0]
    phys = denormalize_channels(y, w.channel_ranges)
    sigma = phys[1] if w.channels == 2 else np.zeros_like(phys[0])
    return PropertyMaps(eps_r=phys[0], sigma_e=sigma)


def decoder_vjp(
    w: WeightsContainer, z: np.ndarray, cotangent: np.ndarray
) -> np.ndarray:
    """Pull a (C, 4N_u, 4N_v) physical-units cotangent back to the latent."""
    _check_arch(w, "decoder")
    z = np.asarray(z, dtype=float)
    cot = np.asarray(cotangent, dtype=float)
    if z.shape != w.latent:
        raise ValueError(f"latent shape {z.shape}, container declares {w.latent}")
    pixel = (w.channels, 4 * w.latent[0], 4 * w.latent[1])
    if cot.shape != pixel:
        raise ValueError(f"cotangent shape {cot.shape}, expected {pixel}")
    tape: list = []
    _decoder_normalized(w, z, tape)
    head_saved, d2_saved, d1_saved = tape
    ranges = w.channel_ranges
    g = (cot * (0.5 * (ranges[:, 1] - ranges[:, 0]))[:, None, None])[None]
    g = _dec_block_bwd(g, _p(w, "dec1"), d1_saved)
    g = _dec_block_bwd(g, _p(w, "dec2"), d2_saved)
    return _head_bwd(g, _p(w, "dec_in"), head_saved)[0, 0]


def run_encoder(w: WeightsContainer, maps: PropertyMaps) -> np.ndarray:
    """Property maps on the (4N_u, 4N_v) grid -> latent mean (N_u, N_v)."""
    _check_arch(w, "encoder")
    nu, nv = w.latent
    if maps.shape != (4 * nu, 4 * nv):
        raise ValueError(
            f"maps shaped {maps.shape}, container expects {(4 * nu, 4 * nv)}"
        )
    x = normalize_channels(maps, w.channel_ranges)[None]
    x = _enc_block_fwd(x, _p(w, "enc1"))
    x = _enc_block_fwd(x, _p(w, "enc2"))
    return _head_fwd(x, _p(w, "enc_mu"))[0, 0]


def _ds_block_fwd(x, v, p):
    x = _norm_conv(_norm_conv(x, p, 1), p, 2)
    x = x + dense(v, p["temb.w"], p["temb.b"])[:, :, None, None]
    skip = _norm_conv(_norm_conv(x, p, 3), p, 4)
    return skip, silu(conv2d(skip, p["down.w"], p["down.b"], stride=2))


def _us_block_fwd(x, skip, v, p):
    x = _norm_conv(_norm_conv(x, p, 1), p, 2)
    x = x + dense(v, p["temb.w"], p["temb.b"])[:, :, None, None]
    x = _norm_conv(_norm_conv(x, p, 3), p, 4)
    x = silu(conv2d(upsample2x(x), p["up.w"], p["up.b"]))
    return np.concatenate([x, skip], axis=1)


def run_score_net(w: WeightsContainer, z: np.ndarray, t) -> np.ndarray:
    """Score of the perturbed latent density; shape-preserving in z.

    ``z`` may carry leading batch axes; ``t`` is a scalar or an array
    broadcastable to them, with every entry in (0, 1].
    """
    _check_arch(w, "score")
    z = np.asarray(z, dtype=float)
    nu, nv = w.latent
    if z.shape[-2:] != (nu, nv):
        raise ValueError(f"latent shaped {z.shape[-2:]}, container declares {(nu, nv)}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0) or np.any(t_arr > 1.0):
        raise ValueError(f"diffusion time must lie in (0, 1], got {t}")
    lead = z.shape[:-2]
    zb = z.reshape((-1, 1, nu, nv))
    tb = np.broadcast_to(t_arr, lead).reshape(-1) if lead else t_arr.reshape(1)

    arg = 2.0 * np.pi * tb[:, None] * w.fourier_w[None, :]
    emb = _p(w, "temb.dense")
    v = silu(dense(np.concatenate([np.sin(arg), np.cos(arg)], axis=1),
                   emb["w"], emb["b"]))
    s1, x = _ds_block_fwd(zb, v, _p(w, "ds1"))
    s2, x = _ds_block_fwd(x, v, _p(w, "ds2"))
    s3, x = _ds_block_fwd(x, v, _p(w, "ds3"))
    x = _us_block_fwd(x, s3, v, _p(w, "us3"))
    x = _us_block_fwd(x, s2, v, _p(w, "us2"))
    x = _us_block_fwd(x, s1, v, _p(w, "us1"))
    x = _head_fwd(x, _p(w, "out"))
    beta = np.sqrt(SDESchedule(w.sigma_d).beta_sq(tb))
    return (x[:, 0] / beta[:, None, None]).reshape(lead + (nu, nv))


@dataclasses.dataclass
class NeuralDecoder:
    """Decoder-protocol adapter over a trained decoder container."""

    weights: WeightsContainer

    def __post_init__(self) -> None:
        _check_arch(self.weights, "decoder")

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return self.weights.latent

    def decode(self, z: np.ndarray) -> PropertyMaps:
        return run_decoder(self.weights, z)

    def vjp(
        self, z: np.ndarray, cot_eps: np.ndarray, cot_sigma: np.ndarray
    ) -> np.ndarray:
        if self.weights.channels == 2:
            cot = np.stack([np.asarray(cot_eps, float), np.asarray(cot_sigma, float)])
        else:
            # a 1-channel decoder pins conductivity to zero, so its
            # cotangent never reaches the latent
            cot = np.asarray(cot_eps, dtype=float)[None]
        return decoder_vjp(self.weights, z, cot)


@dataclasses.dataclass
class IdentityDecoder:
    """Debugging stub: the latent IS the permittivity map, conductivity 0."""

    shape: tuple[int, int]

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return tuple(self.shape)

    def decode(self, z: np.ndarray) -> PropertyMaps:
        z = np.asarray(z, dtype=float)
        return PropertyMaps(eps_r=z, sigma_e=np.zeros_like(z))

    def vjp(
        self, z: np.ndarray, cot_eps: np.ndarray, cot_sigma: np.ndarray
    ) -> np.ndarray:
        return np.asarray(cot_eps, dtype=float).copy()
