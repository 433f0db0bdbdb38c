"""Data fidelity and its gradients via the adjoint method.

The log-likelihood of a candidate medium is L = -||d_obs - F(x)||^2/(2 sigma^2)
with F the forward scattering map. Gradients with respect to contrast pixels
need one extra transposed field solve per (transmitter, frequency); gradients
with respect to latent variables compose the pixel gradient with a decoder
vector-Jacobian product.

Unknowns use a real parameterization throughout: two pixel channels
(Re chi, Im chi) at the scene's reference frequency, interchangeable with
(eps_r, sigma_e) through the background permittivity. All returned gradients
are plain real arrays in whichever coordinates the caller works in; the one
complex-valued convenience, :func:`grad_contrast`, packs the two channel
derivatives into real and imaginary parts of one grid.
"""
from __future__ import annotations

import dataclasses
from typing import Protocol

import numpy as np

from .scene import EPSILON_0, GridSpec, PropertyMaps, Scene
from .scattering import (
    FieldSolver,
    GreensOperators,
    MeasurementSet,
    SolverOptions,
    assemble_greens,
    build_contrast,
    contrast_at_frequency,
    contrast_to_properties,
)


@dataclasses.dataclass(frozen=True)
class LikelihoodSpec:
    """Observed data, noise scale, and scene for the Gaussian likelihood.

    ``sigma`` defaults to noise_level * std(Re d_obs) when the measurement
    set records a nonzero noise level; otherwise it must be given.
    """

    d_obs: MeasurementSet
    scene: Scene
    sigma: float | None = None

    def __post_init__(self) -> None:
        expect = (self.scene.n_freq, self.scene.n_tx, self.scene.n_rx)
        if self.d_obs.shape != expect:
            raise ValueError(
                f"observed data shape {self.d_obs.shape} does not match scene {expect}"
            )
        if self.sigma is None:
            nl = self.d_obs.noise_level
            if nl <= 0:
                raise ValueError(
                    "sigma must be given when the data carry no noise level"
                )
            object.__setattr__(
                self, "sigma", float(nl * np.std(self.d_obs.data.real))
            )
        if not (self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclasses.dataclass(frozen=True)
class MaskSpec:
    """Keep-inside circular gradient mask (meters)."""

    center: tuple[float, float] = (0.0, 0.0)
    radius: float = np.inf

    def __post_init__(self) -> None:
        if not (self.radius >= 0):
            raise ValueError(f"mask radius must be non-negative, got {self.radius}")

    def keep(self, grid: GridSpec) -> np.ndarray:
        xc, yc = grid.cell_centers()
        return np.hypot(xc - self.center[0], yc - self.center[1]) <= self.radius


def apply_sensitivity_mask(grad: np.ndarray, mask: MaskSpec, grid: GridSpec) -> np.ndarray:
    """Zero gradient entries whose cell centers fall outside the mask circle.

    Accepts any (..., ny, nx) stack, real or complex.
    """
    g = np.asarray(grad)
    if g.shape[-2:] != (grid.ny, grid.nx):
        raise ValueError(
            f"gradient trailing shape {g.shape[-2:]} does not match grid "
            f"({grid.ny}, {grid.nx})"
        )
    return np.where(mask.keep(grid), g, np.zeros((), dtype=g.dtype))


class Decoder(Protocol):
    """Maps a real latent array to property maps, with reverse-mode support."""

    @property
    def latent_shape(self) -> tuple[int, ...]: ...

    def decode(self, z: np.ndarray) -> PropertyMaps: ...

    def vjp(self, z: np.ndarray, cot_eps: np.ndarray, cot_sigma: np.ndarray) -> np.ndarray: ...


@dataclasses.dataclass
class ChiPixelDecoder:
    """Identity decoder: the latent IS the contrast image.

    The latent holds (channels, ny, nx) real values; channel 0 is Re chi and
    channel 1 (when present) Im chi, both at the scene's reference frequency,
    after undoing an optional per-channel affine normalization
    chi_c = offset_c + scale_c * z_c. With one channel, Im chi is pinned to 0.
    """

    scene: Scene
    channels: int = 2
    offsets: tuple[float, ...] | None = None
    scales: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.channels not in (1, 2):
            raise ValueError("ChiPixelDecoder supports 1 or 2 channels")
        if self.offsets is None:
            self.offsets = (0.0,) * self.channels
        if self.scales is None:
            self.scales = (1.0,) * self.channels
        if len(self.offsets) != self.channels or len(self.scales) != self.channels:
            raise ValueError("offsets/scales must have one entry per channel")

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return (self.channels, self.scene.grid.ny, self.scene.grid.nx)

    def chi_ref(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != self.latent_shape:
            raise ValueError(f"latent shape {z.shape}, expected {self.latent_shape}")
        re = self.offsets[0] + self.scales[0] * z[0]
        im = (self.offsets[1] + self.scales[1] * z[1]) if self.channels == 2 else 0.0
        return re + 1j * (im * np.ones_like(re) if np.isscalar(im) else im)

    def decode(self, z: np.ndarray) -> PropertyMaps:
        return contrast_to_properties(
            self.chi_ref(z), self.scene, self.scene.reference_frequency
        )

    def vjp(self, z: np.ndarray, cot_eps: np.ndarray, cot_sigma: np.ndarray) -> np.ndarray:
        e = complex(self.scene.background.eps_rb)
        w0 = 2.0 * np.pi * self.scene.reference_frequency * EPSILON_0
        g_re = e.real * cot_eps - w0 * e.imag * cot_sigma
        if self.channels == 1:
            return np.stack([self.scales[0] * g_re])
        g_im = -e.imag * cot_eps - w0 * e.real * cot_sigma
        return np.stack([self.scales[0] * g_re, self.scales[1] * g_im])


def _as_chi_ref(x, scene: Scene) -> np.ndarray:
    """Accept PropertyMaps, a complex contrast grid, or (2, ny, nx) channels."""
    if isinstance(x, PropertyMaps):
        return build_contrast(x, scene, scene.reference_frequency)
    arr = np.asarray(x)
    if np.iscomplexobj(arr) and arr.shape == (scene.grid.ny, scene.grid.nx):
        return arr.astype(complex)
    if arr.ndim == 3 and arr.shape == (2, scene.grid.ny, scene.grid.nx):
        return arr[0] + 1j * arr[1]
    raise ValueError(
        f"cannot interpret shape {arr.shape} as a contrast image for this scene"
    )


class _ResidualPullback:
    """One likelihood evaluation with the per-frequency adjoint fields.

    For each frequency g the coefficient field

        c_g = sum_p e_t_p * (s_p + G_D u_p),
        s_p = G_S^T conj(r_p),  (I - diag(chi) G_D) u_p = chi * s_p

    turns any contrast perturbation into the first-order change of the
    squared residual: d||r||^2 = -2 Re sum(c_g * dchi_g). Everything
    downstream (pixel, property, latent gradients) is algebra on c_g.
    """

    def __init__(
        self,
        chi_ref: np.ndarray,
        spec: LikelihoodSpec,
        operators: list[GreensOperators],
        options: SolverOptions | None,
        need_gradient: bool,
    ):
        scene = spec.scene
        self.spec = spec
        self.d_sim = np.empty_like(spec.d_obs.data)
        self.h_fields: list[np.ndarray] = []
        e = complex(scene.background.eps_rb)
        for g, f in enumerate(scene.frequencies):
            f = float(f)
            ops = operators[g]
            chi_g = contrast_at_frequency(chi_ref, scene, f)
            solver = FieldSolver(ops, chi_g, options)
            e_t = solver.solve(ops.incident)
            self.d_sim[g] = ops.apply_gs(chi_g * e_t)
            if need_gradient:
                r = spec.d_obs.data[g] - self.d_sim[g]
                s = ops.apply_gs_transpose(np.conj(r))
                u = solver.solve_transpose(chi_g * s)
                c = np.sum(e_t * (s + ops.apply_gd(u)), axis=0)
                self.h_fields.append(c / e)
        resid = spec.d_obs.data - self.d_sim
        self.sq_residual = float(np.sum(np.abs(resid) ** 2))

    @property
    def log_likelihood(self) -> float:
        return -0.5 * self.sq_residual / self.spec.sigma**2

    @property
    def measurement_rmse(self) -> float:
        denom = float(np.linalg.norm(self.spec.d_obs.data))
        return float(np.sqrt(self.sq_residual)) / denom if denom > 0 else 0.0

    def grad_properties(self) -> tuple[np.ndarray, np.ndarray]:
        """(dL/deps_r, dL/dsigma_e), summed over frequencies."""
        inv_s2 = 1.0 / self.spec.sigma**2
        g_eps = np.zeros(self.h_fields[0].shape, dtype=float)
        g_sig = np.zeros_like(g_eps)
        for h, f in zip(self.h_fields, self.spec.scene.frequencies):
            g_eps += h.real
            g_sig += h.imag / (2.0 * np.pi * float(f) * EPSILON_0)
        return inv_s2 * g_eps, inv_s2 * g_sig

    def grad_chi_ref(self) -> np.ndarray:
        """Complex grid packing (dL/dRe chi, dL/dIm chi) at the reference frequency."""
        scene = self.spec.scene
        e = complex(scene.background.eps_rb)
        f_ref = scene.reference_frequency
        inv_s2 = 1.0 / self.spec.sigma**2
        out_re = np.zeros(self.h_fields[0].shape, dtype=float)
        out_im = np.zeros_like(out_re)
        for h, f in zip(self.h_fields, scene.frequencies):
            kappa = f_ref / float(f)
            out_re += e.real * h.real - kappa * e.imag * h.imag
            out_im += -(e.imag * h.real + kappa * e.real * h.imag)
        return inv_s2 * (out_re + 1j * out_im)


def _pullback(
    x,
    spec: LikelihoodSpec,
    decoder: Decoder | None,
    operators: list[GreensOperators] | None,
    options: SolverOptions | None,
    need_gradient: bool,
) -> _ResidualPullback:
    if decoder is not None:
        maps = decoder.decode(x)
        chi_ref = build_contrast(maps, spec.scene, spec.scene.reference_frequency)
    else:
        chi_ref = _as_chi_ref(x, spec.scene)
    if operators is None:
        operators = [assemble_greens(spec.scene, float(f)) for f in spec.scene.frequencies]
    return _ResidualPullback(chi_ref, spec, operators, options, need_gradient)


def data_fidelity(
    x,
    spec: LikelihoodSpec,
    decoder: Decoder | None = None,
    options: SolverOptions | None = None,
    operators: list[GreensOperators] | None = None,
) -> float:
    """Log-likelihood L = -||d_obs - F(x)||^2 / (2 sigma^2); always <= 0."""
    return _pullback(x, spec, decoder, operators, options, False).log_likelihood


def grad_contrast(
    x,
    spec: LikelihoodSpec,
    options: SolverOptions | None = None,
    operators: list[GreensOperators] | None = None,
) -> np.ndarray:
    """dL/dchi as one complex grid at the reference frequency.

    The real part is dL/d(Re chi) and the imaginary part dL/d(Im chi), with
    every scene frequency's contribution pulled back through the dispersion
    model and accumulated. ``x`` may be PropertyMaps, a complex contrast
    grid, or two real channels.
    """
    return _pullback(x, spec, None, operators, options, True).grad_chi_ref()


def grad_properties(
    x,
    spec: LikelihoodSpec,
    options: SolverOptions | None = None,
    operators: list[GreensOperators] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(dL/deps_r, dL/dsigma_e) pixel gradients, summed over frequencies."""
    return _pullback(x, spec, None, operators, options, True).grad_properties()


def grad_latent(
    z: np.ndarray,
    spec: LikelihoodSpec,
    decoder: Decoder,
    options: SolverOptions | None = None,
    operators: list[GreensOperators] | None = None,
    mask: MaskSpec | None = None,
) -> np.ndarray:
    """Real gradient dL/dz through the decoder, optionally sensitivity-masked.

    The mask zeroes the pixel-space cotangents before the decoder pullback,
    so low-sensitivity regions contribute nothing regardless of latent shape.
    """
    pb = _pullback(z, spec, decoder, operators, options, True)
    g_eps, g_sig = pb.grad_properties()
    if mask is not None:
        g_eps = apply_sensitivity_mask(g_eps, mask, spec.scene.grid)
        g_sig = apply_sensitivity_mask(g_sig, mask, spec.scene.grid)
    return decoder.vjp(z, g_eps, g_sig)


class EmLikelihood:
    """Likelihood bound to one scene/data/decoder, as samplers consume it.

    Precomputes the Green's operators once; ``grad`` returns the latent
    gradient together with scalars worth logging.
    """

    def __init__(
        self,
        spec: LikelihoodSpec,
        decoder: Decoder,
        options: SolverOptions | None = None,
        mask: MaskSpec | None = None,
    ):
        self.spec = spec
        self.decoder = decoder
        self.options = options
        self.mask = mask
        self.operators = [
            assemble_greens(spec.scene, float(f)) for f in spec.scene.frequencies
        ]

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return self.decoder.latent_shape

    def value(self, z: np.ndarray) -> float:
        return data_fidelity(z, self.spec, self.decoder,
                             self.options, self.operators)

    def simulate(self, z: np.ndarray) -> MeasurementSet:
        pb = _pullback(z, self.spec, self.decoder, self.operators,
                       self.options, False)
        return MeasurementSet(pb.d_sim)

    def grad(self, z: np.ndarray) -> tuple[np.ndarray, dict]:
        pb = _pullback(z, self.spec, self.decoder, self.operators,
                       self.options, True)
        g_eps, g_sig = pb.grad_properties()
        if self.mask is not None:
            g_eps = apply_sensitivity_mask(g_eps, self.mask, self.spec.scene.grid)
            g_sig = apply_sensitivity_mask(g_sig, self.mask, self.spec.scene.grid)
        g = self.decoder.vjp(z, g_eps, g_sig)
        info = {
            "log_likelihood": pb.log_likelihood,
            "measurement_rmse": pb.measurement_rmse,
        }
        return g, info
