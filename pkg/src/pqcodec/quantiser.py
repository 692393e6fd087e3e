"""Exact nearest-codeword search, grid encode/decode and the quantisation loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    IndexGrid,
    InvalidInputError,
    InvalidStateError,
    LatentGrid,
    ProductCodebook,
    SubCodebook,
)
from .diagnostics import mse

# Upper bound on the (rows x K) distance block held in memory at once.
_BLOCK_ELEMENTS = 1 << 21


def assign(vectors: np.ndarray, entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest entry of ``entries`` for every row of ``vectors`` by exhaustive scan.

    Distances are squared l2, accumulated channel by channel in float64; ties go
    to the lowest index (``argmin`` returns the first minimum).

    Returns:
        ``(indices, squared_distances)``, both of length ``len(vectors)``.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    entries = np.asarray(entries, dtype=np.float64)
    n, dim = vectors.shape
    K = entries.shape[0]
    if K == 0:
        raise InvalidStateError("cannot assign against an empty codebook")
    if entries.shape[1] != dim:
        raise InvalidInputError(f"vector dimension {dim} != codeword dimension {entries.shape[1]}")
    idx = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    rows = max(1, _BLOCK_ELEMENTS // K)
    cols = entries.T.copy()
    for start in range(0, n, rows):
        block = vectors[start : start + rows]
        dist = np.zeros((block.shape[0], K))
        for j in range(dim):
            diff = block[:, j, None] - cols[j]
            dist += diff * diff
        k = np.argmin(dist, axis=1)
        idx[start : start + rows] = k
        best[start : start + rows] = dist[np.arange(block.shape[0]), k]
    return idx, best


def nearest_codeword(subvector, book: SubCodebook) -> tuple[int, np.ndarray]:
    """Index and value of the codeword closest to ``subvector``."""
    if book.K == 0:
        raise InvalidStateError("codebook is empty")
    subvector = np.asarray(subvector, dtype=np.float64)
    if subvector.ndim != 1 or subvector.shape[0] != book.dim:
        raise InvalidInputError(
            f"subvector shape {subvector.shape} does not match codeword dimension {book.dim}"
        )
    if not np.all(np.isfinite(subvector)):
        raise InvalidInputError("subvector contains non-finite values")
    idx, _ = assign(subvector[None, :], book.entries)
    k = int(idx[0])
    return k, book.entries[k].astype(np.float64)


def encode_vectors(vectors: np.ndarray, pc: ProductCodebook) -> np.ndarray:
    """Per-subspace indices ``(n, S)`` for an ``(n, d)`` array of pixels."""
    vectors = np.asarray(vectors, dtype=np.float64)
    cfg = pc.config
    if vectors.ndim != 2 or vectors.shape[1] != cfg.d:
        raise InvalidInputError(f"expected vectors of dimension {cfg.d}, got shape {vectors.shape}")
    if not np.all(np.isfinite(vectors)):
        raise InvalidInputError("vectors contain non-finite values")
    sub = cfg.sub_dim
    out = np.empty((vectors.shape[0], cfg.S), dtype=np.int64)
    for s, book in enumerate(pc.books):
        out[:, s], _ = assign(vectors[:, s * sub : (s + 1) * sub], book.entries)
    return out


def decode_vectors(codes: np.ndarray, pc: ProductCodebook) -> np.ndarray:
    """Table lookup: ``(n, S)`` indices to ``(n, d)`` float64 pixels."""
    codes = np.asarray(codes)
    cfg = pc.config
    if codes.ndim != 2 or codes.shape[1] != cfg.S:
        raise InvalidInputError(f"expected codes of shape (n, {cfg.S}), got {codes.shape}")
    if codes.size and (codes.min() < 0 or codes.max() >= cfg.K):
        raise InvalidInputError(f"index out of range for K={cfg.K}")
    return np.concatenate(
        [book.entries[codes[:, s]] for s, book in enumerate(pc.books)], axis=1
    ).astype(np.float64)


@dataclass(frozen=True)
class QuantiseResult:
    indices: IndexGrid
    z_q: LatentGrid
    distortion: float  # per-scalar MSE between z_e and z_q


def pq_encode(z_e: LatentGrid, pc: ProductCodebook) -> QuantiseResult:
    """Quantise every pixel of ``z_e`` subspace by subspace."""
    if z_e.d != pc.config.d:
        raise InvalidInputError(f"latent dimension {z_e.d} != codebook dimension {pc.config.d}")
    codes = encode_vectors(z_e.vectors(), pc)
    z_q = decode_vectors(codes, pc).reshape(z_e.data.shape)
    return QuantiseResult(
        indices=IndexGrid(codes.reshape(z_e.h, z_e.w, pc.config.S)),
        z_q=LatentGrid(z_q),
        distortion=mse(z_e.data, z_q),
    )


def pq_decode(indices: IndexGrid, pc: ProductCodebook) -> LatentGrid:
    if indices.S != pc.config.S:
        raise InvalidInputError(f"index grid has S={indices.S}, codebook has S={pc.config.S}")
    codes = indices.indices.reshape(-1, indices.S)
    return LatentGrid(decode_vectors(codes, pc).reshape(indices.h, indices.w, pc.config.d))


@dataclass(frozen=True)
class LossTerms:
    """Quantisation loss split by which side receives the gradient.

    ``codebook_loss`` is ``||z_e - sg(z_q)||^2`` (drives the encoder) and
    ``commitment_loss`` is ``||sg(z_e) - z_q||^2`` (drives the codewords). Both
    are mean-reduced over all ``h*w*d`` scalars and have the same value.
    """

    codebook_loss: float
    commitment_loss: float
    total: float


def _check_same_shape(a: LatentGrid, b: LatentGrid) -> None:
    if a.data.shape != b.data.shape:
        raise InvalidInputError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def pq_loss(z_e: LatentGrid, z_q: LatentGrid, beta: float) -> LossTerms:
    _check_same_shape(z_e, z_q)
    residual = mse(z_e.data, z_q.data)
    return LossTerms(residual, residual, residual + beta * residual)


def loss_gradients(z_e: LatentGrid, z_q: LatentGrid, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``LossTerms.total`` under the stop-gradient rules.

    Returns:
        ``(grad_z_e, grad_z_q)`` where ``grad_z_e = 2 (z_e - z_q) / N`` with
        ``z_q`` held fixed and ``grad_z_q = 2 beta (z_q - z_e) / N`` with ``z_e``
        held fixed; ``N = h * w * d``.
    """
    _check_same_shape(z_e, z_q)
    n = z_e.data.size
    residual = z_e.data - z_q.data
    return 2.0 * residual / n, -2.0 * beta * residual / n


def codeword_gradients(
    z_e: LatentGrid, indices: IndexGrid, pc: ProductCodebook, beta: float | None = None
) -> np.ndarray:
    """Gradient of the total loss w.r.t. every codeword, shape ``(S, K, d // S)``.

    Each pixel's ``grad_z_q`` slice is scattered onto the codeword it selected;
    unselected codewords get zero.
    """
    cfg = pc.config
    beta = cfg.beta if beta is None else beta
    z_q = pq_decode(indices, pc)
    _, grad_q = loss_gradients(z_e, z_q, beta)
    grad_q = grad_q.reshape(-1, cfg.d)
    codes = indices.indices.reshape(-1, cfg.S)
    sub = cfg.sub_dim
    out = np.zeros((cfg.S, cfg.K, sub))
    for s in range(cfg.S):
        np.add.at(out[s], codes[:, s], grad_q[:, s * sub : (s + 1) * sub])
    return out


def straight_through(z_e: LatentGrid, z_q: LatentGrid) -> LatentGrid:
    """Forward value of ``z_e + sg(z_q - z_e)``, which is exactly ``z_q``.

    The backward rule is the identity on ``z_e``; see :func:`straight_through_grad`.
    """
    _check_same_shape(z_e, z_q)
    return LatentGrid(z_q.data.copy())


def straight_through_grad(grad_output) -> np.ndarray:
    """Gradient w.r.t. ``z_e`` given the gradient w.r.t. the straight-through output."""
    return np.array(grad_output, dtype=np.float64, copy=True)
