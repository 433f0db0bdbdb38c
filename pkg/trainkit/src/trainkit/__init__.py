"""Training toolkit for the latent autoencoder and score network.

Fits both networks on procedurally generated phantoms, exports weights in
the shared container format, and verifies numeric parity against the
inference package's forward passes.
"""

from .config import (
    ConfigError,
    TrainConfig,
    autoencoder_defaults,
    load_config,
    read_config_text,
    score_defaults,
)
from .container_io import container_bytes, read_container, write_container
from .data import (
    DEFAULT_EPS_RANGE,
    DEFAULT_SIGMA_RANGE,
    TrainData,
    build_dataset,
    channel_ranges,
    make_grid,
    phantom_maps,
)
from .export import (
    export_and_parity,
    export_containers,
    module_tensors,
    parity_report,
)
from .models import Decoder, Encoder, ScoreNet, beta_sq
from .training import (
    AutoencoderResult,
    ScoreResult,
    TrainingDiverged,
    encode_dataset,
    reconstruction_rmse,
    train_autoencoder,
    train_score_model,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "TrainConfig",
    "autoencoder_defaults",
    "load_config",
    "read_config_text",
    "score_defaults",
    "container_bytes",
    "read_container",
    "write_container",
    "DEFAULT_EPS_RANGE",
    "DEFAULT_SIGMA_RANGE",
    "TrainData",
    "build_dataset",
    "channel_ranges",
    "make_grid",
    "phantom_maps",
    "export_and_parity",
    "export_containers",
    "module_tensors",
    "parity_report",
    "Decoder",
    "Encoder",
    "ScoreNet",
    "beta_sq",
    "AutoencoderResult",
    "ScoreResult",
    "TrainingDiverged",
    "encode_dataset",
    "reconstruction_rmse",
    "train_autoencoder",
    "train_score_model",
    "__version__",
]
