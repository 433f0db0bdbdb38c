"""Training-loop behavior on small fixtures.

Desk-scale budgets live in test_acceptance; here the datasets are tiny and
every run takes seconds. The synthetic-Gaussian score check has an exact
oracle: for z0 ~ N(mu, v) elementwise, the perturbed density at time t is
N(mu, v + beta(t)^2), so the true score at z_t is -(z_t - mu)/(v + beta^2).
"""

import numpy as np
import pytest
import torch

from trainkit import (
    ScoreNet,
    TrainConfig,
    TrainingDiverged,
    beta_sq,
    encode_dataset,
    reconstruction_rmse,
    score_defaults,
    train_autoencoder,
    train_score_model,
)

TINY = dict(dataset_size=96, latent=(8, 8), batch_size=32, seed=11)


@pytest.fixture(scope="module")
def tiny_run(tiny_data):
    cfg = TrainConfig(epochs=6, lr=1e-3, **TINY)
    return cfg, train_autoencoder(cfg, tiny_data.x, tiny_data.ranges)


class TestAutoencoderLoop:
    def test_loss_decreases(self, tiny_run):
        _, result = tiny_run
        assert result.history[-1].loss < result.history[0].loss

    def test_history_covers_every_epoch(self, tiny_run):
        cfg, result = tiny_run
        assert [h.epoch for h in result.history] == list(range(cfg.epochs))

    def test_lr_decays_exponentially(self, tiny_run):
        cfg, result = tiny_run
        lrs = np.array([h.lr for h in result.history])
        assert np.allclose(lrs, cfg.lr * cfg.lr_decay ** np.arange(cfg.epochs))

    def test_seed_determinism(self, tiny_data):
        cfg = TrainConfig(epochs=2, lr=1e-3, **TINY)
        a = train_autoencoder(cfg, tiny_data.x, tiny_data.ranges)
        b = train_autoencoder(cfg, tiny_data.x, tiny_data.ranges)
        assert [h.loss for h in a.history] == [h.loss for h in b.history]
        for pa, pb in zip(a.decoder.parameters(), b.decoder.parameters()):
            assert torch.equal(pa, pb)

    def test_kl_zero_reconstructs_at_least_as_well(self, tiny_data):
        """Dropping the KL term relaxes the objective."""
        kw = dict(epochs=6, lr=1e-3, **TINY)
        with_kl = train_autoencoder(
            TrainConfig(kl_coeff=0.02, **kw), tiny_data.x, tiny_data.ranges
        )
        without = train_autoencoder(
            TrainConfig(kl_coeff=0.0, **kw), tiny_data.x, tiny_data.ranges
        )
        assert without.history[-1].recon <= with_kl.history[-1].recon

    def test_divergence_aborts_with_diagnostics(self, tiny_data):
        poisoned = tiny_data.x.copy()
        poisoned[0, 0, 0, 0] = np.nan
        cfg = TrainConfig(epochs=1, lr=1e-3, **TINY)
        with pytest.raises(TrainingDiverged) as err:
            train_autoencoder(cfg, poisoned, tiny_data.ranges)
        diag = err.value.diagnostics
        assert diag["stage"] == "autoencoder"
        assert {"epoch", "step", "lr"} <= set(diag)

    def test_shape_validation(self, tiny_data):
        cfg = TrainConfig(epochs=1, **dict(TINY, latent=(16, 16)))
        with pytest.raises(ValueError, match="shaped"):
            train_autoencoder(cfg, tiny_data.x, tiny_data.ranges)

    def test_encode_dataset_shape(self, tiny_run, tiny_data):
        cfg, result = tiny_run
        z = encode_dataset(result.encoder, tiny_data.x)
        assert z.shape == (len(tiny_data.x),) + cfg.latent
        assert z.dtype == np.float32

    def test_reconstruction_rmse_in_unit_scale(self, tiny_run, tiny_data):
        _, result = tiny_run
        v = reconstruction_rmse(result.encoder, result.decoder, tiny_data.x)
        assert 0.0 < v < 1.0


def synthetic_gaussian_latents(n, shape, mean, std, rng):
    return (mean + std * rng.standard_normal((n,) + shape)).astype(np.float32)


@pytest.fixture(scope="module")
def gaussian_fit():
    rng = np.random.default_rng(5)
    mean, std = 0.6, 0.5
    latents = synthetic_gaussian_latents(512, (8, 8), mean, std, rng)
    cfg = score_defaults(
        dataset_size=512, latent=(8, 8), epochs=30, batch_size=128,
        lr=2e-3, lr_decay=0.97, seed=2,
    )
    return mean, std, train_score_model(cfg, latents)


class TestScoreLoop:
    def test_loss_decreases(self, gaussian_fit):
        _, _, result = gaussian_fit
        assert result.history[-1].loss < result.history[0].loss

    def test_matches_analytic_gaussian_score(self, gaussian_fit):
        """Mean cosine similarity > 0.9 against the closed form at t = 0.5."""
        mean, std, result = gaussian_fit
        t = 0.5
        rng = np.random.default_rng(123)
        z0 = synthetic_gaussian_latents(256, (8, 8), mean, std, rng)
        b2 = float(beta_sq(torch.tensor(t, dtype=torch.float64), 20.0))
        z_t = (z0 + np.sqrt(b2) * rng.standard_normal(z0.shape)).astype(np.float32)

        net = result.model
        net.eval()
        with torch.no_grad():
            got = net.score(
                torch.from_numpy(z_t)[:, None],
                torch.full((len(z_t),), t),
            )[:, 0].numpy()
        want = -(z_t - mean) / (std**2 + b2)

        num = np.sum(got.reshape(len(z_t), -1) * want.reshape(len(z_t), -1), axis=1)
        den = np.linalg.norm(got.reshape(len(z_t), -1), axis=1) * np.linalg.norm(
            want.reshape(len(z_t), -1), axis=1
        )
        assert np.mean(num / den) > 0.9

    def test_divergence_aborts(self):
        latents = np.zeros((64, 8, 8), dtype=np.float32)
        latents[3, 2, 2] = np.inf
        cfg = score_defaults(dataset_size=64, latent=(8, 8), epochs=1,
                             batch_size=32, seed=0)
        with pytest.raises(TrainingDiverged) as err:
            train_score_model(cfg, latents)
        assert err.value.diagnostics["stage"] == "score"

    def test_shape_validation(self):
        cfg = score_defaults(latent=(16, 16), epochs=1)
        with pytest.raises(ValueError, match="shaped"):
            train_score_model(cfg, np.zeros((4, 8, 8), dtype=np.float32))

    def test_fourier_frequencies_frozen_in_model(self):
        torch.manual_seed(3)
        w = 30.0 * torch.randn(256)
        net = ScoreNet(w.clone(), 20.0)
        assert torch.equal(net.fourier_w, w)
        assert not net.fourier_w.requires_grad
