"""Command-line front end.

Four subcommands move data through the library: ``simulate`` turns a phantom
spec into noise-free and noisy measurements, ``invert`` runs any of the five
reconstruction methods, ``evaluate`` scores an estimate against the truth,
and ``render`` dumps property maps as PGM images and CSV grids. Every run
writes a ``manifest.json`` that lists each artifact with its sha256 and a
run fingerprint hashed over the input file contents, the command, the method,
and the seed. Output directory and thread count are excluded from the
fingerprint so reruns elsewhere stay comparable.

Exit codes: 0 success, 2 bad configuration or values, 3 missing or malformed
files, 4 numerical failure. ``ISP_LOG_LEVEL`` selects the logging level.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import invert_from_config
from .io import (
    FormatError,
    load_maps,
    load_measurements,
    load_scene,
    read_json,
    save_maps,
    save_measurements,
    write_csv_matrix,
    write_json,
    write_pgm,
)
from .likelihood import ChiPixelDecoder, EmLikelihood, LikelihoodSpec
from .metrics import evaluate_reconstruction
from .nets import NeuralDecoder, WeightsFormatError, load_weights
from .phantoms import PhantomSpec, make_phantom
from .priors import SDESchedule, make_neural_score
from .sampler import (
    ChainAbort,
    ConfigError,
    SamplerConfig,
    mmse_estimate,
    run_chains,
)
from .scattering import MeasurementSet, SolverError, add_noise, forward_simulate
from .scene import SceneError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

SAMPLING_METHODS = ("ldpnp", "pdpnp")
BASELINE_METHODS = ("occam", "tv-admm", "gmr")
METHODS = SAMPLING_METHODS + BASELINE_METHODS

log = logging.getLogger("ispnp.cli")


def _sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclasses.dataclass
class RunManifest:
    """One CLI invocation: which files go in, what method, where output lands.

    ``fingerprint`` hashes the input file contents together with the command,
    method, and seed. It deliberately ignores ``threads`` and ``out``: the
    same inputs must produce the same numbers no matter where they are
    written or how many workers run.
    """

    command: str
    scene: str | None = None
    phantom: str | None = None
    measurements: str | None = None
    method: str | None = None
    config: str | None = None
    weights_decoder: str | None = None
    weights_score: str | None = None
    estimate: str | None = None
    truth: str | None = None
    maps: str | None = None
    seed: int | None = None
    threads: int = 1
    out: str = "."

    _INPUT_FIELDS = (
        "scene",
        "phantom",
        "measurements",
        "config",
        "weights_decoder",
        "weights_score",
        "estimate",
        "truth",
        "maps",
    )

    def input_paths(self) -> dict[str, str]:
        return {
            name: path
            for name in self._INPUT_FIELDS
            if (path := getattr(self, name)) is not None
        }

    def validate(self) -> None:
        if self.method is not None and self.method not in METHODS:
            raise ValueError(
                f"unknown method {self.method!r}; choose one of {', '.join(METHODS)}"
            )
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")
        for name, path in self.input_paths().items():
            if not Path(path).is_file():
                raise FileNotFoundError(f"--{name.replace('_', '-')}: {path}")

    def fingerprint(self) -> str:
        doc = {
            "command": self.command,
            "method": self.method,
            "seed": self.seed,
            "inputs": {
                name: _sha256_file(path)
                for name, path in sorted(self.input_paths().items())
            },
        }
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return {
            k: v
            for k, v in dataclasses.asdict(self).items()
            if v is not None
        }


def _out_dir(man: RunManifest) -> Path:
    out = Path(man.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(man: RunManifest, out: Path, artifacts: list[Path]) -> None:
    doc = {
        "tool": {"name": "ispnp", "version": __version__},
        "invocation": man.to_dict(),
        "fingerprint": man.fingerprint(),
        "artifacts": {p.name: _sha256_file(p) for p in artifacts},
    }
    write_json(doc, out / "manifest.json")
    log.info("wrote %d artifacts to %s", len(artifacts) + 1, out)


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    """Dict rows to CSV, columns in first-seen order, missing cells empty."""
    if not rows:
        Path(path).write_text("")
        return
    cols: list[str] = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, restval="")
        writer.writeheader()
        writer.writerows(rows)


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat: dict = {}
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{name}."))
        else:
            flat[name] = value
    return flat


def _load_observed(path: str, scene) -> MeasurementSet:
    # the ISPD payload is flat; the scene dictates (n_freq, n_tx, n_rx)
    shape = (scene.n_freq, scene.n_tx, scene.n_rx)
    data, noise_level = load_measurements(path, shape=shape)
    return MeasurementSet(data, noise_level=noise_level)


def _check_decoder_grid(decoder, scene) -> None:
    # decode a zero latent once rather than hard-coding the upsampling factor
    probe = decoder.decode(np.zeros(decoder.latent_shape))
    want = (scene.grid.ny, scene.grid.nx)
    if probe.shape != want:
        raise ConfigError(
            f"decoder produces {probe.shape} maps but the scene grid is {want}"
        )


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args: argparse.Namespace) -> int:
    man = _manifest(args)
    scene = load_scene(man.scene)
    spec = PhantomSpec.from_json(Path(man.phantom).read_text())
    cfg = read_json(man.config) if man.config else {}
    noise_level = float(cfg.get("noise_level", 0.0))
    if noise_level < 0:
        raise ConfigError(f"noise_level must be non-negative, got {noise_level}")

    truth = make_phantom(spec, scene.grid).validate_physical()
    clean = forward_simulate(scene, truth, workers=man.threads)
    seed = man.seed if man.seed is not None else 0
    noisy = add_noise(clean, noise_level, np.random.default_rng(seed))

    out = _out_dir(man)
    save_maps(truth, out / "truth.ispm")
    save_measurements(clean.data, out / "clean.ispd")
    save_measurements(noisy.data, out / "noisy.ispd", noise_level=noise_level)
    _finish(man, out, [out / "truth.ispm", out / "clean.ispd", out / "noisy.ispd"])
    return EXIT_OK


def cmd_invert(args: argparse.Namespace) -> int:
    man = _manifest(args)
    scene = load_scene(man.scene)
    d_obs = _load_observed(man.measurements, scene)
    config = read_json(man.config)
    if not isinstance(config, dict):
        raise ConfigError("method config must be a JSON object")
    stated = config.pop("method", None)
    if stated is not None and stated != man.method:
        raise ConfigError(
            f"config file is for method {stated!r} but {man.method!r} was requested"
        )

    out = _out_dir(man)
    if man.method in SAMPLING_METHODS:
        artifacts = _invert_sampling(man, scene, d_obs, config, out)
    else:
        artifacts = _invert_baseline(man, scene, d_obs, config, out)
    _finish(man, out, artifacts)
    return EXIT_OK


def _invert_baseline(
    man: RunManifest, scene, d_obs: MeasurementSet, config: dict, out: Path
) -> list[Path]:
    internal = {"occam": "occam", "tv-admm": "tv", "gmr": "gmr"}[man.method]
    decoder = None
    if man.method == "gmr":
        if man.weights_decoder is None:
            raise ConfigError("gmr needs --weights-decoder")
        decoder = NeuralDecoder(load_weights(man.weights_decoder))
        _check_decoder_grid(decoder, scene)
    rng = np.random.default_rng(man.seed if man.seed is not None else 0)

    trace: list[dict] = []
    maps = invert_from_config(
        internal, d_obs, scene, config, decoder=decoder, rng=rng, trace=trace
    )
    save_maps(maps, out / "estimate.ispm")
    _write_rows_csv(trace, out / "trace.csv")
    return [out / "estimate.ispm", out / "trace.csv"]


def _invert_sampling(
    man: RunManifest, scene, d_obs: MeasurementSet, config: dict, out: Path
) -> list[Path]:
    sampler_dict = config.get("sampler")
    if not isinstance(sampler_dict, dict):
        raise ConfigError("sampling config must hold a 'sampler' object")
    expected_space = "latent" if man.method == "ldpnp" else "pixel"
    stated_space = sampler_dict.get("space")
    if stated_space is not None and stated_space != expected_space:
        raise ConfigError(
            f"{man.method} runs in {expected_space} space, config says {stated_space!r}"
        )
    cfg = SamplerConfig.from_dict({**sampler_dict, "space": expected_space})
    if man.seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(man.seed))

    if man.weights_score is None:
        raise ConfigError(f"{man.method} needs --weights-score")
    score_w = load_weights(man.weights_score)
    sched = SDESchedule(sigma_d=score_w.sigma_d, eps_t=cfg.eps_t)
    score = make_neural_score(sched, score_w)

    if man.method == "ldpnp":
        if man.weights_decoder is None:
            raise ConfigError("ldpnp needs --weights-decoder")
        decoder = NeuralDecoder(load_weights(man.weights_decoder))
        if decoder.latent_shape != score_w.latent:
            raise ConfigError(
                f"decoder latent {decoder.latent_shape} does not match score "
                f"latent {score_w.latent}"
            )
        _check_decoder_grid(decoder, scene)
    else:
        channels = int(config.get("channels", 2))
        offsets = config.get("offsets")
        scales = config.get("scales")
        decoder = ChiPixelDecoder(
            scene,
            channels=channels,
            offsets=tuple(offsets) if offsets is not None else None,
            scales=tuple(scales) if scales is not None else None,
        )
        if score_w.latent != (scene.grid.ny, scene.grid.nx):
            raise ConfigError(
                f"pixel-space score latent {score_w.latent} must match the "
                f"grid ({scene.grid.ny}, {scene.grid.nx})"
            )

    sigma = config.get("sigma")
    spec = LikelihoodSpec(
        d_obs=d_obs, scene=scene, sigma=float(sigma) if sigma is not None else None
    )
    # one operator assembly shared by every chain; run_chains passes a
    # grad-model straight through, so the decoder slot can stay empty
    model = EmLikelihood(spec, decoder, mask=cfg.mask)
    samples, histories = run_chains(model, None, score, sched, cfg, workers=man.threads)
    result = mmse_estimate(samples, decoder, diagnostics=histories)

    save_maps(result.mmse_props, out / "mmse.ispm")
    save_maps(result.std_props, out / "std.ispm")
    artifacts = [out / "mmse.ispm", out / "std.ispm"]
    for i, z in enumerate(samples):
        path = out / f"sample_{i:02d}.ispm"
        save_maps(decoder.decode(z), path)
        artifacts.append(path)
    rows = [
        {"chain": c, **row}
        for c, history in enumerate(histories)
        for row in history
    ]
    _write_rows_csv(rows, out / "diagnostics.csv")
    artifacts.append(out / "diagnostics.csv")
    return artifacts


def cmd_evaluate(args: argparse.Namespace) -> int:
    man = _manifest(args)
    estimate = load_maps(man.estimate)
    truth = load_maps(man.truth)
    if (man.measurements is None) != (man.scene is None):
        raise ConfigError(
            "data-space scoring needs both --scene and --measurements"
        )
    d_est = d_obs = None
    if man.measurements is not None:
        scene = load_scene(man.scene)
        d_obs = _load_observed(man.measurements, scene)
        d_est = forward_simulate(scene, estimate, workers=man.threads)

    report = evaluate_reconstruction(estimate, truth, d_est=d_est, d_obs=d_obs)
    out = _out_dir(man)
    doc = report.to_dict()
    doc["fingerprint"] = man.fingerprint()
    write_json(doc, out / "metrics.json")
    _write_rows_csv([_flatten(report.to_dict())], out / "metrics.csv")
    _finish(man, out, [out / "metrics.json", out / "metrics.csv"])
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    man = _manifest(args)
    maps = load_maps(man.maps)
    stem = Path(man.maps).stem
    out = _out_dir(man)
    artifacts: list[Path] = []
    for name, plane in (("eps_r", maps.eps_r), ("sigma_e", maps.sigma_e)):
        pgm = out / f"{stem}_{name}.pgm"
        grid = out / f"{stem}_{name}.csv"
        write_pgm(plane, pgm)
        write_csv_matrix(plane, grid)
        artifacts += [pgm, grid]
    _finish(man, out, artifacts)
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def _manifest(args: argparse.Namespace) -> RunManifest:
    man = RunManifest(
        command=args.command,
        scene=getattr(args, "scene", None),
        phantom=getattr(args, "phantom", None),
        measurements=getattr(args, "measurements", None),
        method=getattr(args, "method", None),
        config=getattr(args, "config", None),
        weights_decoder=getattr(args, "weights_decoder", None),
        weights_score=getattr(args, "weights_score", None),
        estimate=getattr(args, "estimate", None),
        truth=getattr(args, "truth", None),
        maps=getattr(args, "maps", None),
        seed=args.seed,
        threads=args.threads,
        out=args.out,
    )
    man.validate()
    return man


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None,
                     help="RNG seed; overrides any seed in the config")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads for chains and frequencies")
    sub.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ispnp",
        description="2-D electromagnetic inverse scattering: simulate "
        "measurements, reconstruct property maps, score and render results.",
        epilog="exit codes: 0 ok, 2 configuration, 3 file I/O, 4 numerical",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", help="phantom spec to noise-free and noisy measurements"
    )
    sim.add_argument("--scene", required=True, help="scene JSON")
    sim.add_argument("--phantom", required=True, help="phantom spec JSON")
    sim.add_argument("--config", help="JSON with optional noise_level")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    inv = sub.add_parser("invert", help="measurements to property maps")
    inv.add_argument("--scene", required=True, help="scene JSON")
    inv.add_argument("--measurements", required=True, help="ISPD data file")
    inv.add_argument("--method", required=True, choices=METHODS)
    inv.add_argument("--config", required=True, help="method config JSON")
    inv.add_argument("--weights-decoder", help="LDWT decoder container")
    inv.add_argument("--weights-score", help="LDWT score container")
    _add_common(inv)
    inv.set_defaults(func=cmd_invert)

    ev = sub.add_parser("evaluate", help="score an estimate against the truth")
    ev.add_argument("--estimate", required=True, help="estimate ISPM file")
    ev.add_argument("--truth", required=True, help="ground-truth ISPM file")
    ev.add_argument("--scene", help="scene JSON, for the data-space score")
    ev.add_argument("--measurements", help="observed ISPD, for the data-space score")
    _add_common(ev)
    ev.set_defaults(func=cmd_evaluate)

    ren = sub.add_parser("render", help="property maps to PGM images and CSV grids")
    ren.add_argument("--maps", required=True, help="ISPM file to render")
    _add_common(ren)
    ren.set_defaults(func=cmd_render)

    return parser


def _setup_logging() -> None:
    name = os.environ.get("ISP_LOG_LEVEL", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, WeightsFormatError) as exc:
        # both subclass ValueError, so they must be caught before the
        # configuration branch: a malformed file is an I/O problem
        return _fail(EXIT_IO, f"malformed file: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    except (SolverError, ChainAbort, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERICAL, f"numerical failure: {exc}")
    except (ConfigError, SceneError, json.JSONDecodeError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except KeyError as exc:
        return _fail(EXIT_CONFIG, f"missing config key {exc}")
    except (TypeError, ValueError) as exc:
        return _fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
