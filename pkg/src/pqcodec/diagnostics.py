"""Codebook utilisation and fidelity metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import IndexGrid, InvalidInputError, LatentGrid


def _as_array(x) -> np.ndarray:
    if isinstance(x, LatentGrid):
        return x.data
    return np.asarray(x, dtype=np.float64)


def mse(a, b) -> float:
    """Mean squared difference over all scalars.

    ``np.sum`` reduces pairwise, which keeps the result stable under
    reordering of the inputs.
    """
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InvalidInputError("mse of empty arrays")
    diff = a - b
    return float(np.sum(diff * diff) / diff.size)


def psnr(reference, reconstruction, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for a perfect match."""
    if not peak > 0:
        raise InvalidInputError(f"peak must be > 0, got {peak}")
    err = mse(reference, reconstruction)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


@dataclass(frozen=True)
class UsageStats:
    """Empirical codeword distribution of one subspace.

    Attributes:
        counts: Assignment count per codeword, length ``K``.
        p: ``counts / counts.sum()``.
        H: Shannon entropy in nats.
        H_n: ``H / ln K``; defined as 1 when ``K == 1``.
        P: Perplexity ``exp(H)``, the effective number of codewords.
        P_n: ``P / K``.
    """

    counts: np.ndarray
    p: np.ndarray
    H: float
    H_n: float
    P: float
    P_n: float

    @property
    def K(self) -> int:
        return len(self.counts)

    @classmethod
    def from_counts(cls, counts) -> UsageStats:
        counts = np.asarray(counts)
        if counts.ndim != 1 or counts.size == 0:
            raise InvalidInputError("counts must be a non-empty 1-D array")
        if np.any(counts < 0):
            raise InvalidInputError("counts must be non-negative")
        total = counts.sum()
        if total <= 0:
            raise InvalidInputError("counts sum to zero")
        K = counts.size
        p = counts / total
        nz = p[p > 0]
        H = float(-np.sum(nz * np.log(nz)))
        # clamp rounding so the [0, 1] bounds hold exactly
        H = min(max(H, 0.0), math.log(K))
        H_n = H / math.log(K) if K > 1 else 1.0
        P = math.exp(H)
        return cls(counts=counts.astype(np.int64), p=p, H=H, H_n=H_n, P=P, P_n=P / K)


def usage_stats(indices: IndexGrid, K: int) -> list[UsageStats]:
    """One :class:`UsageStats` per subspace of ``indices``."""
    if indices.indices.size == 0:
        raise InvalidInputError("index grid is empty")
    indices.check_range(K)
    flat = indices.indices.reshape(-1, indices.S)
    return [UsageStats.from_counts(np.bincount(flat[:, s], minlength=K)) for s in range(indices.S)]


def mean_usage(stats: list[UsageStats]) -> tuple[float, float]:
    """Mean ``(H_n, P_n)`` across subspaces."""
    return (
        float(np.mean([u.H_n for u in stats])),
        float(np.mean([u.P_n for u in stats])),
    )
