from __future__ import annotations

import numpy as np
import pytest

from ispnp import BackgroundSpec, GridSpec, PropertyMaps, Scene, circle_positions


def make_scene(
    nx: int = 16,
    ny: int | None = None,
    cell_size: float = 0.3 / 16,
    eps_rb: complex = 1.0,
    n_tx: int = 4,
    n_rx: int = 8,
    ring_radius: float = 0.5,
    frequencies=(1e9,),
) -> Scene:
    ny = nx if ny is None else ny
    return Scene(
        grid=GridSpec(nx=nx, ny=ny, cell_size=cell_size),
        background=BackgroundSpec(eps_rb=eps_rb),
        tx_positions=circle_positions(ring_radius, n_tx),
        rx_positions=circle_positions(ring_radius, n_rx, phase=np.pi / n_rx),
        frequencies=np.asarray(frequencies, dtype=float),
    )


def smooth_random_maps(
    scene: Scene, rng: np.random.Generator, eps_span: float = 0.6, sigma_span: float = 0.0
) -> PropertyMaps:
    """Band-limited random property maps, always physical."""
    ny, nx = scene.grid.ny, scene.grid.nx

    def smooth(field: np.ndarray) -> np.ndarray:
        spec = np.fft.fft2(field)
        fy = np.fft.fftfreq(ny)[:, None]
        fx = np.fft.fftfreq(nx)[None, :]
        spec *= np.exp(-40.0 * (fy**2 + fx**2))
        low = np.fft.ifft2(spec).real
        low -= low.min()
        peak = low.max()
        return low / peak if peak > 0 else low

    e = complex(scene.background.eps_rb)
    eps = e.real * (1.0 + eps_span * smooth(rng.standard_normal((ny, nx))))
    base_sigma = -2.0 * np.pi * scene.reference_frequency * 8.8541878128e-12 * e.imag
    sig = base_sigma + sigma_span * smooth(rng.standard_normal((ny, nx)))
    return PropertyMaps(eps, sig)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_weights(
    arch: str,
    rng: np.random.Generator,
    latent: tuple[int, int] = (16, 16),
    channels: int = 1,
    ranges: list | None = None,
    sigma_d: float = 20.0,
):
    """Container with plausibly scaled random tensors for one architecture."""
    from ispnp.nets import WeightsContainer, architecture_tensors

    meta: dict = {"arch": arch, "latent": list(latent)}
    if arch == "score":
        meta["sigma_d"] = sigma_d
        meta["fourier_w"] = rng.normal(0.0, 16.0, 256).tolist()
    else:
        meta["channels"] = channels
        meta["channel_ranges"] = ranges or [[1.0, 2.5], [0.0, 0.5]][:channels]
    tensors = {}
    for name, shape in architecture_tensors(arch, channels).items():
        if name.endswith(".g"):
            tensors[name] = rng.uniform(0.7, 1.3, shape)
        elif name.endswith(".b") and len(shape) == 1:
            tensors[name] = rng.normal(0.0, 0.05, shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors[name] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
    return WeightsContainer(metadata=meta, tensors=tensors)
