"""Weight containers and forward/reverse passes of the trained networks."""

from .container import (
    ARCH_TAGS,
    LDWT_MAGIC,
    LDWT_VERSION,
    MissingTensorError,
    TensorShapeError,
    WeightsContainer,
    WeightsFormatError,
    architecture_tensors,
    load_weights,
    save_weights,
)
from .models import (
    IdentityDecoder,
    NeuralDecoder,
    decoder_vjp,
    denormalize_channels,
    normalize_channels,
    run_decoder,
    run_encoder,
    run_score_net,
)

__all__ = [
    "ARCH_TAGS",
    "LDWT_MAGIC",
    "LDWT_VERSION",
    "MissingTensorError",
    "TensorShapeError",
    "WeightsContainer",
    "WeightsFormatError",
    "architecture_tensors",
    "load_weights",
    "save_weights",
    "IdentityDecoder",
    "NeuralDecoder",
    "decoder_vjp",
    "denormalize_channels",
    "normalize_channels",
    "run_decoder",
    "run_encoder",
    "run_score_net",
]
