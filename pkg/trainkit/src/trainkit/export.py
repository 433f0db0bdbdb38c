"""Container export and numeric parity against the inference package.

The exchange surface between training and inference is the weight
container plus a parity report: after every export the containers are
reloaded through the inference reader and the inference forward passes are
compared against the local torch modules on fresh random inputs. Stage
names in the report are container-tensor prefixes (enc1, dec2, us3, ...),
so a corrupted or misexported tensor is called out by the stage it feeds.

Comparisons run both sides in float64 on the identical f32-stored weights;
the thresholds then absorb nothing but operation-ordering noise.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ispnp import PropertyMaps
from ispnp.nets import (
    denormalize_channels,
    load_weights,
    run_decoder,
    run_encoder,
    run_score_net,
)

from .container_io import write_container
from .models import Decoder, Encoder, ScoreNet

ENCODER_TOL = 1e-4
DECODER_TOL = 1e-4
SCORE_TOL = 1e-3
SCORE_TIMES = (0.01, 0.5, 1.0)


def module_tensors(model: nn.Module) -> dict[str, np.ndarray]:
    """State dict renamed to container conventions, as f32 arrays.

    Convolution and dense weights map to ``.w``, group-norm scales to
    ``.g``, every bias to ``.b``. Buffers stay out; they travel in the
    metadata.
    """
    norms = {
        name for name, m in model.named_modules() if isinstance(m, nn.GroupNorm)
    }
    out: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        prefix, _, leaf = name.rpartition(".")
        if not prefix or leaf not in ("weight", "bias"):
            raise ValueError(f"parameter {name!r} does not fit the naming contract")
        suffix = "b" if leaf == "bias" else ("g" if prefix in norms else "w")
        out[f"{prefix}.{suffix}"] = (
            p.detach().cpu().contiguous().to(torch.float32).numpy().copy()
        )
    return out


def _latent_list(latent) -> list[int]:
    nu, nv = (int(n) for n in latent)
    return [nu, nv]


def encoder_metadata(latent, channels: int, channel_ranges) -> dict:
    return {
        "arch": "encoder",
        "latent": _latent_list(latent),
        "channels": int(channels),
        "channel_ranges": [[float(lo), float(hi)] for lo, hi in channel_ranges],
    }


def decoder_metadata(latent, channels: int, channel_ranges) -> dict:
    meta = encoder_metadata(latent, channels, channel_ranges)
    meta["arch"] = "decoder"
    return meta


def score_metadata(latent, model: ScoreNet) -> dict:
    w = model.fourier_w.detach().cpu().to(torch.float32).numpy()
    return {
        "arch": "score",
        "latent": _latent_list(latent),
        "sigma_d": float(model.sigma_d),
        "fourier_w": [float(v) for v in w],
    }


def export_containers(
    out_dir: str | Path,
    latent,
    channel_ranges,
    encoder: Encoder | None = None,
    decoder: Decoder | None = None,
    score: ScoreNet | None = None,
) -> dict[str, Path]:
    """Write one container per provided network; returns name -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    if encoder is not None:
        meta = encoder_metadata(latent, encoder.channels, channel_ranges)
        paths["encoder"] = write_container(
            out_dir / "encoder.ldwt", meta, module_tensors(encoder)
        )
    if decoder is not None:
        meta = decoder_metadata(latent, decoder.channels, channel_ranges)
        paths["decoder"] = write_container(
            out_dir / "decoder.ldwt", meta, module_tensors(decoder)
        )
    if score is not None:
        paths["score"] = write_container(
            out_dir / "score.ldwt", score_metadata(latent, score), module_tensors(score)
        )
    return paths


def _as_double(model: nn.Module) -> nn.Module:
    clone = copy.deepcopy(model).double()
    clone.eval()
    return clone


def _stage(tensor_name: str) -> str:
    return tensor_name.split(".", 1)[0]


def _sweep_tensors(loaded, reference: dict[str, np.ndarray]) -> list[dict]:
    """Exact f32 comparison of container content against the torch source."""
    bad = []
    for name, want in reference.items():
        got = loaded.tensors.get(name)
        if got is None:
            bad.append({"tensor": name, "stage": _stage(name), "error": "missing"})
        elif not np.array_equal(got, want):
            bad.append(
                {
                    "tensor": name,
                    "stage": _stage(name),
                    "max_abs": float(np.max(np.abs(got - want))),
                }
            )
    return bad


def parity_report(
    paths: dict[str, Path],
    rng: np.random.Generator,
    encoder: Encoder | None = None,
    decoder: Decoder | None = None,
    score: ScoreNet | None = None,
    n_samples: int = 10,
    report_path: str | Path | None = None,
) -> dict:
    """Reload exported containers and compare inference against torch.

    Fails when any stored tensor differs from its torch source or any
    forward-pass max-abs difference exceeds its stage threshold. The
    returned report carries per-stage numbers and the worst offender.
    """
    stages: dict[str, dict] = {}
    mismatches: list[dict] = []

    if encoder is not None:
        w = load_weights(paths["encoder"])
        mismatches += _sweep_tensors(w, module_tensors(encoder))
        net = _as_double(encoder)
        ranges = w.channel_ranges
        worst = 0.0
        with torch.no_grad():
            for _ in range(n_samples):
                xn = rng.uniform(-1.0, 1.0, (len(ranges),) + tuple(
                    4 * n for n in w.latent
                ))
                phys = denormalize_channels(xn, ranges)
                sigma = phys[1] if w.channels == 2 else np.zeros_like(phys[0])
                ours = net(torch.from_numpy(xn)[None])[0][0, 0].numpy()
                theirs = run_encoder(w, PropertyMaps(eps_r=phys[0], sigma_e=sigma))
                worst = max(worst, float(np.max(np.abs(ours - theirs))))
        stages["encoder"] = {
            "max_abs": worst, "threshold": ENCODER_TOL, "pass": worst <= ENCODER_TOL
        }

    if decoder is not None:
        w = load_weights(paths["decoder"])
        mismatches += _sweep_tensors(w, module_tensors(decoder))
        net = _as_double(decoder)
        ranges = w.channel_ranges
        worst = 0.0
        with torch.no_grad():
            for _ in range(n_samples):
                z = rng.standard_normal(w.latent)
                y = net(torch.from_numpy(z)[None, None])[0].numpy()
                phys = denormalize_channels(y, ranges)
                maps = run_decoder(w, z)
                diff = np.abs(phys[0] - maps.eps_r)
                if w.channels == 2:
                    diff = np.maximum(diff, np.abs(phys[1] - maps.sigma_e))
                worst = max(worst, float(diff.max()))
        stages["decoder"] = {
            "max_abs": worst, "threshold": DECODER_TOL, "pass": worst <= DECODER_TOL
        }

    if score is not None:
        w = load_weights(paths["score"])
        mismatches += _sweep_tensors(w, module_tensors(score))
        net = _as_double(score)
        worst = 0.0
        with torch.no_grad():
            for i in range(n_samples):
                t = SCORE_TIMES[i % len(SCORE_TIMES)]
                z = rng.standard_normal(w.latent)
                ours = net.score(
                    torch.from_numpy(z)[None, None],
                    torch.tensor([t], dtype=torch.float64),
                )[0, 0].numpy()
                theirs = run_score_net(w, z, t)
                worst = max(worst, float(np.max(np.abs(ours - theirs))))
        stages["score"] = {
            "max_abs": worst, "threshold": SCORE_TOL, "pass": worst <= SCORE_TOL,
            "times": list(SCORE_TIMES),
        }

    ok = not mismatches and all(s["pass"] for s in stages.values())
    worst_entry = None
    candidates = [
        {"kind": "tensor", "name": m["tensor"], "stage": m["stage"],
         "max_abs": m.get("max_abs")}
        for m in mismatches
    ] + [
        {"kind": "forward", "name": name, "stage": name, "max_abs": s["max_abs"]}
        for name, s in stages.items()
        if not s["pass"]
    ]
    if candidates:
        # missing tensors and NaN diffs outrank any finite difference
        def badness(c):
            v = c["max_abs"]
            return np.inf if v is None or not np.isfinite(v) else v

        worst_entry = max(candidates, key=badness)
    report = {
        "pass": ok,
        "n_samples": n_samples,
        "stages": stages,
        "tensor_mismatches": mismatches,
        "worst": worst_entry,
        "files": {k: str(v) for k, v in paths.items()},
    }
    if report_path is not None:
        Path(report_path).write_text(json.dumps(report, indent=2) + "\n")
    return report


def export_and_parity(
    out_dir: str | Path,
    latent,
    channel_ranges,
    rng: np.random.Generator,
    encoder: Encoder | None = None,
    decoder: Decoder | None = None,
    score: ScoreNet | None = None,
    n_samples: int = 10,
) -> dict:
    """Export the given networks, then verify them; writes parity_report.json."""
    paths = export_containers(
        out_dir, latent, channel_ranges, encoder=encoder, decoder=decoder, score=score
    )
    return parity_report(
        paths,
        rng,
        encoder=encoder,
        decoder=decoder,
        score=score,
        n_samples=n_samples,
        report_path=Path(out_dir) / "parity_report.json",
    )
