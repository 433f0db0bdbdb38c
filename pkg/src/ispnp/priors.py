"""Variance-exploding diffusion schedule and pluggable score functions.

A score function is any callable ``score(z, t) -> array`` approximating
grad_z log p_t(z), where p_t is the prior smoothed by the diffusion kernel
at time t. Analytic Gaussian and mixture scores exist for verification;
the neural score wraps a trained network loaded from a weights container.
"""
from __future__ import annotations

import dataclasses
import json
import warnings
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


@dataclasses.dataclass(frozen=True)
class SDESchedule:
    """Variance-exploding forward SDE: dz = g(t) dw with g(t) = sigma_d^t.

    Drift f(t) is identically zero and the scaling alpha(t) identically one,
    so the perturbation kernel at time t is N(z_0, beta(t)^2 I) with
    beta^2(t) = (sigma_d^(2t) - 1) / (2 ln sigma_d). ``eps_t`` is the lower
    integration limit used by samplers and trained score models.
    """

    sigma_d: float = 20.0
    eps_t: float = 0.001

    def __post_init__(self) -> None:
        if not (self.sigma_d > 1.0):
            raise ValueError(f"sigma_d must exceed 1, got {self.sigma_d}")
        if not (0.0 < self.eps_t < 1.0):
            raise ValueError(f"eps_t must lie in (0, 1), got {self.eps_t}")

    def g(self, t: float) -> float:
        return float(self.sigma_d**t)

    def f(self, t: float) -> float:
        return 0.0

    def alpha(self, t: float) -> float:
        return 1.0

    def beta_sq(self, t) -> float:
        log_s = np.log(self.sigma_d)
        return (np.exp(2.0 * np.asarray(t) * log_s) - 1.0) / (2.0 * log_s)


def beta(sched: SDESchedule, t) -> float:
    """Perturbation standard deviation at diffusion time t in [0, 1]."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return np.sqrt(sched.beta_sq(t))


def beta_inv(sched: SDESchedule, eta: float, clamp: bool = False) -> float:
    """Diffusion time whose perturbation std equals eta.

    t = ln(1 + 2 eta^2 ln sigma_d) / (2 ln sigma_d). Values of eta above
    beta(1) either raise or, with ``clamp``, warn and return 1.0.
    """
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    log_s = np.log(sched.sigma_d)
    t = float(np.log1p(2.0 * eta**2 * log_s) / (2.0 * log_s))
    if t > 1.0:
        if not clamp:
            raise ValueError(
                f"eta={eta} exceeds the schedule ceiling beta(1)={beta(sched, 1.0):.6g}"
            )
        warnings.warn(
            f"eta={eta} exceeds beta(1); clamping diffusion time to 1.0",
            stacklevel=2,
        )
        return 1.0
    return t


def gaussian_score(mean, var, sched: SDESchedule, z, t) -> np.ndarray:
    """Score of N(mean, var*I) smoothed to time t: (mean - z)/(var + beta^2)."""
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise ValueError("var must be positive")
    return (np.asarray(mean) - np.asarray(z)) / (var + sched.beta_sq(t))


@dataclasses.dataclass(frozen=True)
class GmmPrior:
    """Gaussian mixture with diagonal covariances; arrays shaped (K,) and (K, d)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.atleast_2d(np.asarray(self.means, dtype=float))
        v = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if w.ndim != 1 or m.shape != v.shape or m.shape[0] != w.size:
            raise ValueError(
                f"inconsistent mixture shapes: weights {w.shape}, means {m.shape}, "
                f"variances {v.shape}"
            )
        if np.any(w <= 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "vars": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmPrior":
        return cls(
            weights=np.asarray(d["weights"], dtype=float),
            means=np.asarray(d["means"], dtype=float),
            variances=np.asarray(d["vars"], dtype=float),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GmmPrior":
        return cls.from_dict(json.loads(Path(path).read_text()))


def gmm_responsibilities(prior: GmmPrior, sched: SDESchedule, z, t) -> np.ndarray:
    """Posterior component weights of the smoothed mixture, (..., K)."""
    z = np.asarray(z, dtype=float)
    s = prior.variances + sched.beta_sq(t)  # (K, d)
    diff = z[..., None, :] - prior.means  # (..., K, d)
    log_lik = -0.5 * np.sum(diff**2 / s + np.log(2.0 * np.pi * s), axis=-1)
    log_num = np.log(prior.weights) + log_lik
    return np.exp(log_num - logsumexp(log_num, axis=-1, keepdims=True))


def gmm_score(prior: GmmPrior, sched: SDESchedule, z, t) -> np.ndarray:
    """Score of the beta(t)-smoothed mixture; z has the mixture dim last."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != prior.dim:
        raise ValueError(f"last axis of z must be {prior.dim}, got {z.shape}")
    s = prior.variances + sched.beta_sq(t)
    gam = gmm_responsibilities(prior, sched, z, t)  # (..., K)
    per_comp = (prior.means - z[..., None, :]) / s  # (..., K, d)
    return np.sum(gam[..., :, None] * per_comp, axis=-2)


def gmm_log_density(prior: GmmPrior, sched: SDESchedule, z, t) -> np.ndarray:
    """log p_t(z) of the smoothed mixture, for gradient cross-checks."""
    z = np.asarray(z, dtype=float)
    s = prior.variances + sched.beta_sq(t)
    diff = z[..., None, :] - prior.means
    log_lik = -0.5 * np.sum(diff**2 / s + np.log(2.0 * np.pi * s), axis=-1)
    return logsumexp(np.log(prior.weights) + log_lik, axis=-1)


def neural_score(w, sched: SDESchedule, z, t) -> np.ndarray:
    """Trained score network evaluation with the eps_t clamp.

    ``w`` is a score-architecture WeightsContainer; its recorded sigma_d must
    match the schedule. Times below sched.eps_t are clamped up with a warning
    so reverse integration never queries the net outside its trained range.
    """
    from .nets.models import run_score_net

    recorded = w.metadata.get("sigma_d")
    if recorded is not None and not np.isclose(float(recorded), sched.sigma_d):
        raise ValueError(
            f"weights were trained with sigma_d={recorded}, schedule has "
            f"{sched.sigma_d}"
        )
    if t < sched.eps_t:
        warnings.warn(
            f"t={t} below eps_t={sched.eps_t}; clamping", stacklevel=2
        )
        t = sched.eps_t
    return run_score_net(w, z, t)


def make_gaussian_score(sched: SDESchedule, mean, var):
    return lambda z, t: gaussian_score(mean, var, sched, z, t)


def make_gmm_score(sched: SDESchedule, prior: GmmPrior):
    return lambda z, t: gmm_score(prior, sched, z, t)


def make_neural_score(sched: SDESchedule, w):
    return lambda z, t: neural_score(w, sched, z, t)
