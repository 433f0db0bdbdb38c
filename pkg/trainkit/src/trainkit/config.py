"""Run configuration for both training stages.

One dataclass serves the autoencoder and the score model; the factory
functions carry the canonical hyperparameters of each stage (400 epochs at
batch 256, KL coefficient 0.02, sigma_d 20, initial learning rates 8e-4
and 8e-5 with a 0.99 per-epoch exponential decay). Desk-scale runs
override counts, never the contract fields.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path


class ConfigError(ValueError):
    """A configuration value violates its invariant."""


@dataclasses.dataclass
class TrainConfig:
    dataset_size: int = 2000
    epochs: int = 400
    batch_size: int = 256
    lr: float = 8e-4
    lr_decay: float = 0.99
    kl_coeff: float = 0.02
    kl_warmup_epochs: int = 0
    sigma_d: float = 20.0
    latent: tuple[int, int] = (16, 16)
    channels: int = 2
    seed: int = 0
    eps_t: float = 0.001

    def __post_init__(self) -> None:
        for name in ("dataset_size", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not (self.lr > 0):
            raise ConfigError("lr must be positive")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.kl_coeff < 0:
            raise ConfigError("kl_coeff must be nonnegative")
        if int(self.kl_warmup_epochs) < 0:
            raise ConfigError("kl_warmup_epochs must be nonnegative")
        if not (self.sigma_d > 1.0):
            raise ConfigError(f"sigma_d must exceed 1, got {self.sigma_d}")
        self.latent = tuple(int(n) for n in self.latent)
        if len(self.latent) != 2 or any(n <= 0 for n in self.latent):
            raise ConfigError(f"latent must be two positive ints, got {self.latent}")
        # three halvings inside the score U-net; keeps every export loadable
        if any(n % 8 for n in self.latent):
            raise ConfigError(f"latent dims must be divisible by 8, got {self.latent}")
        if self.channels not in (1, 2):
            raise ConfigError(f"channels must be 1 or 2, got {self.channels}")
        if not (0.0 < self.eps_t < 1.0):
            raise ConfigError(f"eps_t must lie in (0, 1), got {self.eps_t}")

    @property
    def map_shape(self) -> tuple[int, int]:
        return (4 * self.latent[0], 4 * self.latent[1])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["latent"] = list(self.latent)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def autoencoder_defaults(**overrides) -> TrainConfig:
    """Canonical autoencoder run; keyword overrides for desk-scale work."""
    return TrainConfig.from_dict(overrides)


def score_defaults(**overrides) -> TrainConfig:
    """Canonical score-model run: same counts, initial learning rate 8e-5."""
    base = {"lr": 8e-5}
    base.update(overrides)
    return TrainConfig.from_dict(base)


def read_config_text(path: str | Path) -> dict:
    """Parse a .json or .yaml/.yml config file into a plain dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name} must hold a mapping at top level")
    return data


def load_config(path: str | Path) -> TrainConfig:
    return TrainConfig.from_dict(read_config_text(path))
