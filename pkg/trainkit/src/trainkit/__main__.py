"""File-driven training run: config file in, containers plus report out.

    python3 -m trainkit CONFIG.{json,yaml} OUT_DIR

The config holds an ``autoencoder`` section and a ``score`` section, each
accepting TrainConfig fields; omitted fields take the canonical values.
A ``heldout_size`` key (default 64) sizes the evaluation split. Exits 0
when the parity report passes, 2 on a config error, 3 on divergence.
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import torch

from .config import autoencoder_defaults, read_config_text, score_defaults
from .data import build_dataset
from .export import export_and_parity
from .training import (
    TrainingDiverged,
    encode_dataset,
    reconstruction_rmse,
    train_autoencoder,
    train_score_model,
)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2:
        print(__doc__, file=sys.stderr)
        return 2
    try:
        blob = read_config_text(argv[0])
        ae_cfg = autoencoder_defaults(**blob.get("autoencoder", {}))
        sc_cfg = score_defaults(**blob.get("score", {}))
        heldout = int(blob.get("heldout_size", 64))
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(argv[1])

    torch.set_num_threads(max(torch.get_num_threads(), 1))
    data = build_dataset(ae_cfg.dataset_size, ae_cfg.latent, ae_cfg.channels)
    held = build_dataset(
        heldout, ae_cfg.latent, ae_cfg.channels, seed0=10_000
    )
    try:
        ae = train_autoencoder(ae_cfg, data.x, data.ranges)
        print(
            f"autoencoder: final loss {ae.history[-1].loss:.5f}, "
            f"held-out rmse {reconstruction_rmse(ae.encoder, ae.decoder, held.x):.4f}"
        )
        latents = encode_dataset(ae.encoder, data.x)
        sc = train_score_model(sc_cfg, latents)
        print(f"score: final loss {sc.history[-1].loss:.5f}")
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3

    report = export_and_parity(
        out_dir,
        ae_cfg.latent,
        data.ranges,
        np.random.default_rng(ae_cfg.seed),
        encoder=ae.encoder,
        decoder=ae.decoder,
        score=sc.model,
    )
    print(f"parity: {'pass' if report['pass'] else 'FAIL'} "
          f"({out_dir / 'parity_report.json'})")
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
