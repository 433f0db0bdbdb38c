"""Alternating likelihood/prior posterior sampler with annealed noise levels.

One outer loop k runs at noise level eta_k: a Langevin phase pulls the state
toward the data while anchored to the loop's entry point (likelihood_step),
then a reverse-diffusion phase integrates the prior score from the time
whose perturbation std equals eta_k back to eps_t (prior_step). Decreasing
eta_k anneals the pair toward the posterior. Chains are independent; the
MMSE estimate and its uncertainty come from averaging decoded samples.

The likelihood enters only through an object with ``latent_shape`` and
``grad(z) -> (gradient, info)``; EmLikelihood provides the scattering one,
and any test double with the same surface plugs in. States may carry leading
batch axes (lockstep chains) as long as the gradient source broadcasts.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .likelihood import Decoder, EmLikelihood, LikelihoodSpec, MaskSpec
from .priors import SDESchedule, beta, beta_inv
from .scene import PropertyMaps


class ConfigError(ValueError):
    """Invalid sampler or run configuration."""


class ChainAbort(RuntimeError):
    """A chain produced a non-finite gradient or state."""

    def __init__(self, message: str, loop: int, step: int):
        super().__init__(f"{message} (outer loop {loop}, inner step {step})")
        self.loop = loop
        self.step = step


def make_annealing_schedule(
    start: float, end: float, n_k: int, plateau: int = 0
) -> np.ndarray:
    """Noise levels: ``plateau`` copies of start, then geometric decay to end."""
    if not (start >= end > 0):
        raise ConfigError(f"need start >= end > 0, got start={start}, end={end}")
    if n_k < 1:
        raise ConfigError(f"n_k must be at least 1, got {n_k}")
    if not (0 <= plateau < n_k):
        raise ConfigError(f"plateau must lie in [0, n_k), got {plateau}")
    tail = np.geomspace(start, end, n_k - plateau)
    return np.concatenate([np.full(plateau, float(start)), tail])


@dataclasses.dataclass
class SamplerConfig:
    """Knobs of the annealed sampler; defaults follow the canonical recipe."""

    eta_schedule: np.ndarray = dataclasses.field(
        default_factory=lambda: make_annealing_schedule(1.0, 0.03, 20)
    )
    n_tau: int = 120
    n_t: int = 500
    m: int = 5
    c_gamma: float = 0.015
    alpha0: float = 1.0
    eps_t: float = 0.001
    space: str = "latent"
    mask: MaskSpec | None = None
    seed: int = 0
    init_mean: float | np.ndarray = 0.0
    init_std: float = 1.0

    def __post_init__(self) -> None:
        self.eta_schedule = np.asarray(self.eta_schedule, dtype=float)
        if self.eta_schedule.ndim != 1 or self.eta_schedule.size < 1:
            raise ConfigError("eta_schedule must be a non-empty 1-D sequence")
        if np.any(self.eta_schedule <= 0):
            raise ConfigError("eta_schedule entries must be positive")
        if np.any(np.diff(self.eta_schedule) > 1e-12):
            raise ConfigError("eta_schedule must be non-increasing")
        for name in ("n_tau", "n_t", "m"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not (self.c_gamma > 0):
            raise ConfigError("c_gamma must be positive")
        if not (self.alpha0 > 0):
            raise ConfigError(
                "alpha0 must be positive; the gradient weighting cannot be disabled"
            )
        if not (0.0 < self.eps_t < 1.0):
            raise ConfigError("eps_t must lie in (0, 1)")
        if self.space not in ("latent", "pixel"):
            raise ConfigError(f"space must be 'latent' or 'pixel', got {self.space!r}")
        if not (self.init_std > 0):
            raise ConfigError("init_std must be positive")

    @property
    def n_k(self) -> int:
        return int(self.eta_schedule.size)

    def validate_against(self, sched: SDESchedule) -> None:
        ceiling = float(beta(sched, 1.0))
        top = float(self.eta_schedule.max())
        if top > ceiling:
            raise ConfigError(
                f"eta_schedule max {top} exceeds beta(1) = {ceiling:.6g} of the "
                "diffusion schedule"
            )

    def to_dict(self) -> dict:
        d = {
            "eta_schedule": [float(v) for v in self.eta_schedule],
            "n_tau": self.n_tau,
            "n_t": self.n_t,
            "m": self.m,
            "c_gamma": self.c_gamma,
            "alpha0": self.alpha0,
            "eps_t": self.eps_t,
            "space": self.space,
            "seed": self.seed,
            "init_std": self.init_std,
        }
        if np.ndim(self.init_mean) == 0:
            d["init_mean"] = float(self.init_mean)
        else:
            d["init_mean"] = np.asarray(self.init_mean).tolist()
        if self.mask is not None:
            d["mask"] = {"center": list(self.mask.center), "radius": self.mask.radius}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        mask = d.pop("mask", None)
        if mask is not None:
            mask = MaskSpec(center=tuple(mask.get("center", (0.0, 0.0))),
                            radius=float(mask["radius"]))
        init_mean = d.pop("init_mean", 0.0)
        if isinstance(init_mean, list):
            init_mean = np.asarray(init_mean, dtype=float)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown sampler config keys: {sorted(unknown)}")
        return cls(mask=mask, init_mean=init_mean, **d)


def chain_rngs(seed: int, m: int) -> list[np.random.Generator]:
    """One counter-based generator per chain, jointly seeded but disjoint."""
    return [
        np.random.Generator(np.random.Philox(s))
        for s in np.random.SeedSequence(seed).spawn(m)
    ]


def _as_model(spec, decoder, cfg: SamplerConfig):
    """Accept a LikelihoodSpec (wrapped with the decoder) or a grad-model."""
    if hasattr(spec, "grad") and hasattr(spec, "latent_shape"):
        return spec
    return EmLikelihood(spec, decoder, mask=cfg.mask)


def _latent_axes(model, z: np.ndarray) -> tuple[int, ...]:
    n_lat = len(model.latent_shape)
    if z.ndim < n_lat or z.shape[z.ndim - n_lat:] != tuple(model.latent_shape):
        raise ValueError(
            f"state shape {z.shape} does not end with latent shape "
            f"{tuple(model.latent_shape)}"
        )
    return tuple(range(z.ndim - n_lat, z.ndim))


def _likelihood_phase(
    model,
    z_hat: np.ndarray,
    cfg: SamplerConfig,
    eta: float,
    rng: np.random.Generator,
    loop: int = 0,
    trace: list | None = None,
) -> tuple[np.ndarray, dict]:
    """Anchored Langevin updates; returns the final state and last-step info."""
    if not (eta > 0):
        raise ConfigError(f"eta must be positive, got {eta}")
    axes = _latent_axes(model, np.asarray(z_hat))
    r = float(np.exp(-cfg.c_gamma))  # gamma = c_gamma * eta^2 cancels eta
    pull = 1.0 - r
    noise_scale = eta * np.sqrt(1.0 - r * r)
    z = np.array(z_hat, dtype=float, copy=True)
    info: dict = {}
    for n in range(cfg.n_tau):
        g, info = model.grad(z)
        if not np.all(np.isfinite(g)):
            raise ChainAbort("non-finite likelihood gradient", loop, n)
        z_sq = np.sum(z * z, axis=axes, keepdims=True)
        g_sq = np.sum(g * g, axis=axes, keepdims=True)
        alpha = cfg.alpha0 * z_sq / (eta**2 * (g_sq + 0.001))
        z = (alpha * eta**2 * pull * g + r * z + pull * z_hat
             + noise_scale * rng.standard_normal(z.shape))
        if trace is not None:
            trace.append(z.copy())
    info = dict(info)
    info["grad_norm"] = float(np.sqrt(np.sum(g * g)))
    return z, info


def likelihood_step(
    z_hat_k: np.ndarray,
    spec,
    decoder: Decoder | None,
    cfg: SamplerConfig,
    eta_k: float,
    rng: np.random.Generator,
    trace: list | None = None,
) -> np.ndarray:
    """Data-consistency phase of one outer loop (state z_hat_k -> z_{k+1/2})."""
    model = _as_model(spec, decoder, cfg)
    z, _ = _likelihood_phase(model, z_hat_k, cfg, eta_k, rng, trace=trace)
    return z


def prior_step(
    z_half: np.ndarray,
    score,
    sched: SDESchedule,
    cfg: SamplerConfig,
    eta_k: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Reverse-diffusion phase from noise level eta_k down to eps_t.

    Integrates z' = z + (g^2(t) score(z, t) - f(t) z) dt + g(t) sqrt(dt) n
    backwards over n_t Euler steps. When beta_inv(eta_k) does not exceed
    eps_t the integration window is empty and the input passes through.
    """
    ceiling = float(beta(sched, 1.0))
    if eta_k > ceiling:
        raise ConfigError(f"eta_k={eta_k} exceeds beta(1)={ceiling:.6g}")
    t_start = beta_inv(sched, float(eta_k))
    if t_start <= cfg.eps_t:
        return np.array(z_half, dtype=float, copy=True)
    delta = (t_start - cfg.eps_t) / cfg.n_t
    z = np.array(z_half, dtype=float, copy=True)
    sqrt_delta = np.sqrt(delta)
    for n in range(cfg.n_t, 0, -1):
        t_n = cfg.eps_t + n * delta
        g_n = sched.g(t_n)
        drift = g_n * g_n * np.asarray(score(z, t_n)) - sched.f(t_n) * z
        z = z + drift * delta + g_n * sqrt_delta * rng.standard_normal(z.shape)
    return z


def _init_state(model, cfg: SamplerConfig, rng: np.random.Generator,
                batch: tuple[int, ...] = ()) -> np.ndarray:
    shape = batch + tuple(model.latent_shape)
    return np.asarray(cfg.init_mean) + cfg.init_std * rng.standard_normal(shape)


def sample_posterior(
    spec,
    decoder: Decoder | None,
    score,
    sched: SDESchedule,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    history: list | None = None,
    batch: tuple[int, ...] = (),
) -> np.ndarray:
    """One full annealing pass; returns the final state (one sample per chain).

    ``batch`` runs that many lockstep chains through shared noise-level
    stages; the gradient source must then broadcast over leading axes.
    """
    cfg.validate_against(sched)
    model = _as_model(spec, decoder, cfg)
    z = _init_state(model, cfg, rng, batch)
    for k, eta in enumerate(cfg.eta_schedule):
        z, info = _likelihood_phase(model, z, cfg, float(eta), rng, loop=k)
        if not np.all(np.isfinite(z)):
            raise ChainAbort("non-finite state after likelihood phase", k, -1)
        z = prior_step(z, score, sched, cfg, float(eta), rng)
        if not np.all(np.isfinite(z)):
            raise ChainAbort("non-finite state after prior phase", k, -1)
        if history is not None:
            row = {"loop": k, "eta": float(eta)}
            row.update({key: float(val) for key, val in info.items()
                        if np.ndim(val) == 0})
            history.append(row)
    return z


def run_chains(
    spec,
    decoder: Decoder | None,
    score,
    sched: SDESchedule,
    cfg: SamplerConfig,
    workers: int = 1,
) -> tuple[np.ndarray, list[list[dict]]]:
    """M independent chains with disjoint counter-based streams.

    Returns (samples stacked on axis 0, per-chain history rows). Results are
    keyed by chain index, so thread scheduling cannot change the output.
    """
    cfg.validate_against(sched)
    rngs = chain_rngs(cfg.seed, cfg.m)
    samples: list[np.ndarray | None] = [None] * cfg.m
    histories: list[list[dict]] = [[] for _ in range(cfg.m)]

    def run_one(i: int) -> None:
        samples[i] = sample_posterior(
            spec, decoder, score, sched, cfg, rngs[i], history=histories[i]
        )

    if workers > 1 and cfg.m > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, range(cfg.m)))
    else:
        for i in range(cfg.m):
            run_one(i)
    return np.stack(samples), histories  # type: ignore[arg-type]


@dataclasses.dataclass
class PosteriorResult:
    """Samples with their decoded mean (MMSE) and per-pixel spread."""

    samples: np.ndarray
    mmse_props: PropertyMaps
    std_props: PropertyMaps
    diagnostics: list = dataclasses.field(default_factory=list)


def mmse_estimate(
    samples: np.ndarray,
    decoder: Decoder,
    diagnostics: list | None = None,
) -> PosteriorResult:
    """Decode every sample; elementwise mean and std over the sample axis."""
    samples = np.asarray(samples)
    if samples.ndim < 1 or samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    eps_stack = []
    sig_stack = []
    for s in samples:
        maps = decoder.decode(s)
        eps_stack.append(maps.eps_r)
        sig_stack.append(maps.sigma_e)
    eps = np.stack(eps_stack)
    sig = np.stack(sig_stack)
    return PosteriorResult(
        samples=samples,
        mmse_props=PropertyMaps(eps.mean(axis=0), sig.mean(axis=0)),
        std_props=PropertyMaps(eps.std(axis=0), sig.std(axis=0)),
        diagnostics=diagnostics or [],
    )
