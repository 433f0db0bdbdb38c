"""Procedural training data: layered-head phantoms from the scene package.

Phantoms come out of the inference package's public generator, so the
training distribution is exactly the family its tests and CLI produce.
Normalization covers the generator's full output span, background and
stroke values included, and the ranges travel with every exported
container so decoding restores physical units.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from ispnp import GridSpec, PropertyMaps
from ispnp.nets import normalize_channels
from ispnp.phantoms import make_phantom, random_phantom

DEFAULT_EPS_RANGE = (1.2, 2.2)
DEFAULT_SIGMA_RANGE = (0.0, 0.01)
DOMAIN_SIZE = 0.3  # metres across the longer grid side


def channel_ranges(
    channels: int,
    eps_range: tuple[float, float] = DEFAULT_EPS_RANGE,
    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE,
) -> list[list[float]]:
    """[lo, hi] per channel, covering background and inclusion extremes."""
    lo, hi = eps_range
    ranges = [[1.0, hi + 0.15 * (hi - lo)]]
    if channels == 2:
        if not sigma_range[1] > 0:
            raise ValueError("two channels need a positive conductivity span")
        ranges.append([0.0, 1.5 * sigma_range[1]])
    return ranges


def make_grid(latent: tuple[int, int]) -> GridSpec:
    nu, nv = latent
    cell = DOMAIN_SIZE / (4 * max(nu, nv))
    return GridSpec(nx=4 * nv, ny=4 * nu, cell_size=cell)


def phantom_maps(
    grid: GridSpec,
    seed: int,
    eps_range: tuple[float, float] = DEFAULT_EPS_RANGE,
    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE,
) -> PropertyMaps:
    spec = random_phantom(
        "layered-head", grid, seed, eps_range=eps_range, sigma_range=sigma_range
    )
    return make_phantom(spec, grid)


@dataclasses.dataclass
class TrainData:
    """Normalized stack plus everything needed to reproduce or invert it."""

    x: np.ndarray  # (N, C, H, W) float32 in [-1, 1]
    ranges: list[list[float]]
    seeds: list[int]
    grid: GridSpec

    @property
    def channels(self) -> int:
        return self.x.shape[1]


def build_dataset(
    n: int,
    latent: tuple[int, int],
    channels: int,
    seed0: int = 0,
    eps_range: tuple[float, float] = DEFAULT_EPS_RANGE,
    sigma_range: tuple[float, float] = DEFAULT_SIGMA_RANGE,
) -> TrainData:
    """n seed-consecutive phantoms, rasterized and normalized per channel."""
    grid = make_grid(latent)
    ranges = channel_ranges(channels, eps_range, sigma_range)
    arr = np.asarray(ranges, dtype=float)
    seeds = list(range(seed0, seed0 + n))
    x = np.empty((n, channels, grid.ny, grid.nx), dtype=np.float32)
    for i, seed in enumerate(seeds):
        maps = phantom_maps(grid, seed, eps_range, sigma_range)
        x[i] = normalize_channels(maps, arr).astype(np.float32)
    return TrainData(x=x, ranges=ranges, seeds=seeds, grid=grid)
