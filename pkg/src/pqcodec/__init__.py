"""Product quantisation of latent vector fields.

Learns per-subspace codebooks over d-dimensional vectors, encodes and decodes
latent grids, and reports codebook utilisation, distortion and matching cost.
"""

from .core import (
    IndexGrid,
    InvalidInputError,
    InvalidStateError,
    LatentGrid,
    PQConfig,
    PQError,
    ProductCodebook,
    SubCodebook,
    fictive_index,
    join_subvectors,
    split_pixel,
    unfictive_index,
)
from .diagnostics import UsageStats, mse, psnr, usage_stats
from .quantiser import (
    LossTerms,
    QuantiseResult,
    nearest_codeword,
    pq_decode,
    pq_encode,
    pq_loss,
    straight_through,
)
from .trainer import (
    LinearCodec,
    TrainConfig,
    TrainReport,
    fit_linear_encoder,
    init_codebooks,
    train_codebooks,
)

__version__ = "0.1.0"

__all__ = [
    "IndexGrid",
    "InvalidInputError",
    "InvalidStateError",
    "LatentGrid",
    "LinearCodec",
    "LossTerms",
    "PQConfig",
    "PQError",
    "ProductCodebook",
    "QuantiseResult",
    "SubCodebook",
    "TrainConfig",
    "TrainReport",
    "UsageStats",
    "fictive_index",
    "fit_linear_encoder",
    "init_codebooks",
    "join_subvectors",
    "mse",
    "nearest_codeword",
    "pq_decode",
    "pq_encode",
    "pq_loss",
    "psnr",
    "split_pixel",
    "straight_through",
    "train_codebooks",
    "unfictive_index",
    "usage_stats",
]
