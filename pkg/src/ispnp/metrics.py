"""Evaluation metrics for reconstructions and simulated data.

Measurement error is the relative complex misfit against the observed
data. Reconstruction error is computed after both maps are sent to
[-1, 1] channels using the truth's per-channel range, so permittivity
and conductivity contribute on equal footing. SSIM uses the standard
11 x 11 Gaussian window (sigma 1.5) with K1 = 0.01, K2 = 0.03.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .scattering import MeasurementSet
from .scene import PropertyMaps

__all__ = [
    "MetricReport",
    "evaluate_reconstruction",
    "rmse",
    "rmse_measurement",
    "rmse_reconstruction",
    "ssim",
]

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5


def _as_data(x) -> np.ndarray:
    if isinstance(x, MeasurementSet):
        return x.data
    return np.asarray(x)


def rmse_measurement(estimate, truth) -> float:
    """Relative misfit ||d_est - d_obs|| / ||d_obs|| over complex samples."""
    est = _as_data(estimate)
    ref = _as_data(truth)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {ref.shape}")
    denom = float(np.linalg.norm(ref))
    if denom == 0.0:
        raise ValueError("reference data have zero norm")
    return float(np.linalg.norm(est - ref)) / denom


def _truth_normalized_channels(
    estimate: PropertyMaps, truth: PropertyMaps
) -> tuple[np.ndarray, np.ndarray]:
    """Both maps as (2, ny, nx) in [-1, 1] per the truth's channel range.

    A flat truth channel (zero range) normalizes with span 1 so the
    difference stays finite and meaningful.
    """
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    est = np.stack([estimate.eps_r, estimate.sigma_e]).astype(float)
    ref = np.stack([truth.eps_r, truth.sigma_e]).astype(float)
    out_e = np.empty_like(est)
    out_r = np.empty_like(ref)
    for c in range(2):
        lo = float(ref[c].min())
        span = float(ref[c].max()) - lo
        if span == 0.0:
            span = 1.0
        out_e[c] = 2.0 * (est[c] - lo) / span - 1.0
        out_r[c] = 2.0 * (ref[c] - lo) / span - 1.0
    return out_e, out_r


def rmse_reconstruction(estimate: PropertyMaps, truth: PropertyMaps) -> float:
    """Root-mean-square error pooled over both normalized channels."""
    est, ref = _truth_normalized_channels(estimate, truth)
    return float(np.sqrt(np.mean((est - ref) ** 2)))


def rmse(domain: str, estimate, truth) -> float:
    """Dispatch on domain: 'measurement' (relative, complex) or
    'reconstruction' (normalized channels)."""
    if domain == "measurement":
        return rmse_measurement(estimate, truth)
    if domain == "reconstruction":
        return rmse_reconstruction(estimate, truth)
    raise ValueError(
        f"domain must be 'measurement' or 'reconstruction', got {domain!r}"
    )


def _gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Kernel-weighted local means over every fully interior window."""
    k = kernel.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", windows, kernel)


def _ssim_single(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    kernel = _gaussian_kernel(SSIM_SIGMA, SSIM_RADIUS)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _windowed(a, kernel)
    mu_b = _windowed(b, kernel)
    # population second moments under the kernel weighting
    var_a = _windowed(a * a, kernel) - mu_a**2
    var_b = _windowed(b * b, kernel) - mu_b**2
    cov = _windowed(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, data_range: float | None = None) -> float:
    """Mean structural similarity between two images or channel stacks.

    Accepts 2-D arrays or (C, ny, nx) stacks; channels are scored
    separately and averaged. ``data_range`` defaults to the reference's
    (second argument's) per-channel max - min, which makes the call
    asymmetric; pass it explicitly when symmetry matters. A flat
    reference channel falls back to range 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if a.ndim != 3:
        raise ValueError(f"expected 2-D images or channel stacks, got {a.shape}")
    size = 2 * SSIM_RADIUS + 1
    if a.shape[-2] < size or a.shape[-1] < size:
        raise ValueError(
            f"image {a.shape[-2:]} is smaller than the {size} x {size} window"
        )
    scores = []
    for c in range(a.shape[0]):
        if data_range is None:
            span = float(b[c].max() - b[c].min())
            if span == 0.0:
                span = 1.0
        else:
            span = float(data_range)
        scores.append(_ssim_single(a[c], b[c], span))
    return float(np.mean(scores))


@dataclasses.dataclass(frozen=True)
class MetricReport:
    """Scalar scores plus the per-channel breakdown behind them.

    ``rmse_measurement`` is None when no measurement pair was scored.
    """

    rmse_measurement: float | None
    rmse_reconstruction: float
    ssim: float
    rmse_channels: tuple[float, float]
    ssim_channels: tuple[float, float]

    def __post_init__(self) -> None:
        if self.rmse_measurement is not None and self.rmse_measurement < 0:
            raise ValueError("measurement RMSE must be non-negative")
        if self.rmse_reconstruction < 0 or any(c < 0 for c in self.rmse_channels):
            raise ValueError("reconstruction RMSE must be non-negative")
        for s in (self.ssim, *self.ssim_channels):
            if not (-1.0 <= s <= 1.0):
                raise ValueError(f"SSIM must lie in [-1, 1], got {s}")

    def to_dict(self) -> dict:
        return {
            "rmse_measurement": self.rmse_measurement,
            "rmse_reconstruction": self.rmse_reconstruction,
            "ssim": self.ssim,
            "rmse_channels": {
                "eps_r": self.rmse_channels[0],
                "sigma_e": self.rmse_channels[1],
            },
            "ssim_channels": {
                "eps_r": self.ssim_channels[0],
                "sigma_e": self.ssim_channels[1],
            },
        }


def evaluate_reconstruction(
    estimate: PropertyMaps,
    truth: PropertyMaps,
    d_est=None,
    d_obs=None,
) -> MetricReport:
    """Score one reconstruction; measurement RMSE only when data given."""
    est, ref = _truth_normalized_channels(estimate, truth)
    rmse_ch = tuple(
        float(np.sqrt(np.mean((est[c] - ref[c]) ** 2))) for c in range(2)
    )
    ssim_ch = tuple(
        ssim(estimate_chan, truth_chan)
        for estimate_chan, truth_chan in (
            (estimate.eps_r, truth.eps_r),
            (estimate.sigma_e, truth.sigma_e),
        )
    )
    meas = None
    if d_est is not None and d_obs is not None:
        meas = rmse_measurement(d_est, d_obs)
    return MetricReport(
        rmse_measurement=meas,
        rmse_reconstruction=float(np.sqrt(np.mean((est - ref) ** 2))),
        ssim=float(np.mean(ssim_ch)),
        rmse_channels=rmse_ch,
        ssim_channels=ssim_ch,
    )
