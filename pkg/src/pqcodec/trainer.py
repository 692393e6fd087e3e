"""Codebook learning: k-means++ seeding, Lloyd or SGD updates, dead-code revival.

Every subspace is trained on its own channel slice with its own random stream
(derived from ``(seed, s)``), so book ``s`` never depends on the data of any
other subspace.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import InvalidInputError, LatentGrid, PQConfig, ProductCodebook
from .diagnostics import UsageStats, usage_stats
from .quantiser import assign, pq_encode

logger = logging.getLogger(__name__)

BATCH_KMEANS = "batch-kmeans"
SGD_COMMITMENT = "sgd-commitment"
MODES = (BATCH_KMEANS, SGD_COMMITMENT)


class PaddedCodebookWarning(UserWarning):
    """Fewer distinct subvectors than codewords; the rest are jittered copies."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 20
    batch_size: int = 256
    learning_rate: float = 1.0
    mode: str = BATCH_KMEANS
    seed: int = 0
    revival_threshold: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.mode == SGD_COMMITMENT and not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0 in sgd mode")
        if self.revival_threshold < 0:
            raise InvalidInputError("revival_threshold must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must fit in an unsigned 64-bit integer")


@dataclass
class TrainReport:
    """Outcome of :func:`train_codebooks`.

    ``trace[i]`` is the per-scalar training MSE measured at iteration ``i``.
    In batch mode it is the distortion of the assignment step, which Lloyd's
    algorithm never increases while ``revival_threshold <= 1``.
    """

    trace: np.ndarray
    usage: list[UsageStats]
    revived: list[int]
    padded: list[int] = field(default_factory=list)

    @property
    def final_distortion(self) -> float:
        return float(self.trace[-1])


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


def _as_dataset(data, d: int) -> np.ndarray:
    if isinstance(data, LatentGrid):
        data = data.vectors()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != d:
        raise InvalidInputError(f"expected data of shape (n, {d}), got {data.shape}")
    if data.shape[0] == 0:
        raise InvalidInputError("dataset is empty")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError("dataset contains non-finite values")
    return data


def _slices(config: PQConfig):
    sub = config.sub_dim
    return [slice(s * sub, (s + 1) * sub) for s in range(config.S)]


def kmeans_pp(x: np.ndarray, K: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """D^2-weighted seeding of ``K`` centres from the rows of ``x``.

    Returns the centres and how many of them had to be padded because ``x``
    holds fewer than ``K`` distinct rows.
    """
    n = x.shape[0]
    centres = np.empty((K, x.shape[1]))
    centres[0] = x[rng.integers(n)]
    d2 = np.sum((x - centres[0]) ** 2, axis=1)
    chosen = 1
    while chosen < K:
        cum = np.cumsum(d2)
        total = cum[-1]
        if not total > 0:
            break
        i = int(np.searchsorted(cum, rng.random() * total, side="right"))
        i = min(i, n - 1)
        if d2[i] == 0:
            # rounding landed on an already-covered row; take the next uncovered one
            i = int(np.flatnonzero(d2 > 0)[0])
        centres[chosen] = x[i]
        d2 = np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1))
        chosen += 1
    padded = K - chosen
    if padded:
        scale = float(np.std(x)) or 1.0
        base = centres[np.arange(padded) % chosen]
        centres[chosen:] = base + 1e-3 * scale * rng.standard_normal(base.shape)
    return centres, padded


def _init(data: np.ndarray, config: PQConfig, seed: int) -> tuple[np.ndarray, list[int]]:
    books, padded = [], []
    for s, sl in enumerate(_slices(config)):
        centres, pad = kmeans_pp(data[:, sl], config.K, _rng(seed, s, 0))
        books.append(centres)
        padded.append(pad)
    if any(padded):
        warnings.warn(
            f"padded {sum(padded)} codewords with jittered copies "
            f"(per subspace: {padded})",
            PaddedCodebookWarning,
            stacklevel=3,
        )
    return np.stack(books), padded


def init_codebooks(data, config: PQConfig, seed: int = 0) -> ProductCodebook:
    """k-means++ initialisation of every sub-codebook from its data slice."""
    data = _as_dataset(data, config.d)
    books, _ = _init(data, config, seed)
    return ProductCodebook.from_array(config, books)


def commitment_loss(x: np.ndarray, codewords: np.ndarray, idx: np.ndarray, beta: float) -> float:
    """``beta * mean_i ||x_i - codewords[idx_i]||^2`` with ``x`` treated as constant."""
    diff = x - codewords[idx]
    return float(beta * np.sum(diff * diff) / x.shape[0])


def commitment_gradient(x: np.ndarray, codewords: np.ndarray, idx: np.ndarray, beta: float) -> np.ndarray:
    """Gradient of :func:`commitment_loss` w.r.t. ``codewords``."""
    grad = np.zeros_like(codewords, dtype=np.float64)
    np.add.at(grad, idx, codewords[idx] - x)
    return 2.0 * beta * grad / x.shape[0]


def _lloyd_update(x: np.ndarray, centres: np.ndarray, idx: np.ndarray) -> np.ndarray:
    K = centres.shape[0]
    counts = np.bincount(idx, minlength=K)
    live = counts > 0
    for j in range(x.shape[1]):
        sums = np.bincount(idx, weights=x[:, j], minlength=K)
        centres[live, j] = sums[live] / counts[live]
    return counts


def _revive(x: np.ndarray, centres: np.ndarray, counts: np.ndarray, threshold: int, rng) -> int:
    dead = np.flatnonzero(counts < threshold)
    if dead.size == 0:
        return 0
    replace = dead.size > x.shape[0]
    picks = rng.choice(x.shape[0], size=dead.size, replace=replace)
    centres[dead] = x[picks]
    return int(dead.size)


def _train_subspace(x: np.ndarray, centres: np.ndarray, tc: TrainConfig, beta: float, rng):
    """Returns ``(centres, sse_trace, revived)`` for one subspace."""
    n, K = x.shape[0], centres.shape[0]
    sse = np.empty(tc.iterations)
    revived = 0
    if tc.mode == BATCH_KMEANS:
        for it in range(tc.iterations):
            idx, dist = assign(x, centres)
            sse[it] = np.sum(dist)
            counts = _lloyd_update(x, centres, idx)
            if it < tc.iterations - 1:
                revived += _revive(x, centres, counts, tc.revival_threshold, rng)
        return centres, sse, revived

    batch = min(tc.batch_size, n)
    per_epoch = -(-n // batch)
    counts = np.zeros(K, dtype=np.int64)
    for it in range(tc.iterations):
        rows = rng.choice(n, size=batch, replace=False)
        xb = x[rows]
        idx, _ = assign(xb, centres)
        centres -= tc.learning_rate * commitment_gradient(xb, centres, idx, beta)
        counts += np.bincount(idx, minlength=K)
        if (it + 1) % per_epoch == 0 and it < tc.iterations - 1:
            revived += _revive(x, centres, counts, tc.revival_threshold, rng)
            counts[:] = 0
        _, dist = assign(x, centres)
        sse[it] = np.sum(dist)
    return centres, sse, revived


def train_codebooks(data, pc: ProductCodebook, tc: TrainConfig) -> tuple[ProductCodebook, TrainReport]:
    """Refine ``pc`` on ``data`` (``(n, d)`` array or :class:`LatentGrid`).

    Batch mode moves every codeword to the mean of its assigned subvectors (a
    Lloyd step, the exact minimiser of the commitment term). SGD mode steps each
    selected codeword along ``2 beta (codeword - subvector) / batch_size``.
    Codewords assigned fewer than ``tc.revival_threshold`` times in a pass are
    re-seeded at random data subvectors.
    """
    cfg = pc.config
    data = _as_dataset(data, cfg.d)
    n = data.shape[0]
    books = pc.as_array().astype(np.float64)
    total_sse = np.zeros(tc.iterations)
    revived = []
    for s, sl in enumerate(_slices(cfg)):
        centres, sse, rev = _train_subspace(data[:, sl], books[s], tc, cfg.beta, _rng(tc.seed, s, 1))
        books[s] = centres
        total_sse += sse
        revived.append(rev)
    trained = ProductCodebook.from_array(cfg, books)
    result = pq_encode(LatentGrid.from_vectors(data), trained)
    report = TrainReport(
        trace=total_sse / (n * cfg.d),
        usage=usage_stats(result.indices, cfg.K),
        revived=revived,
    )
    logger.debug("trained %s: final mse %.6g, revived %s", cfg, result.distortion, revived)
    return trained, report


def fit(data, config: PQConfig, tc: TrainConfig) -> tuple[ProductCodebook, TrainReport]:
    """Seed with k-means++ then train; the report records any padded codewords."""
    data = _as_dataset(data, config.d)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PaddedCodebookWarning)
        books, padded = _init(data, config, tc.seed)
    for w in caught:
        logger.warning("%s", w.message)
    pc, report = train_codebooks(data, ProductCodebook.from_array(config, books), tc)
    report.padded = padded
    return pc, report


@dataclass(frozen=True, eq=False)
class LinearCodec:
    """Orthogonal PCA projection standing in for an autoencoder bottleneck.

    Attributes:
        mean: Source-space mean, shape ``(D,)``.
        components: Orthonormal rows spanning the kept subspace, shape ``(d, D)``.
            Rows beyond ``rank`` are zero when the data is degenerate.
        eigenvalues: All covariance eigenvalues in descending order, shape ``(D,)``.
        rank: Number of non-zero component rows.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    rank: int

    @property
    def d(self) -> int:
        return self.components.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.rank < self.d

    @property
    def captured_variance(self) -> float:
        return float(np.sum(self.eigenvalues[: self.rank]))

    @property
    def tail_variance(self) -> float:
        """Expected squared reconstruction error per sample."""
        return float(np.sum(self.eigenvalues[self.rank :]))

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x.reshape(-1, self.mean.size) - self.mean) @ self.components.T

    def reconstruct(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean


def fit_linear_encoder(data, d: int, rtol: float = 1e-10) -> LinearCodec:
    """Fit a ``d``-dimensional PCA projection of ``data`` (one sample per row)."""
    x = np.asarray(data, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    n, D = x.shape
    if n == 0:
        raise InvalidInputError("dataset is empty")
    if not 1 <= d <= D:
        raise InvalidInputError(f"target dimension {d} must be in [1, {D}]")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("dataset contains non-finite values")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # deterministic sign: largest-magnitude entry of each eigenvector is positive
    pivot = np.argmax(np.abs(evecs), axis=0)
    evecs = evecs * np.sign(evecs[pivot, np.arange(D)])
    top = evals[0] if evals.size else 0.0
    rank = int(min(d, np.sum(evals > rtol * top))) if top > 0 else 0
    components = np.zeros((d, D))
    components[:rank] = evecs[:, :rank].T
    if rank < d:
        logger.warning("covariance rank %d < target dimension %d; padding with zeros", rank, d)
    return LinearCodec(mean=mean, components=components, eigenvalues=evals, rank=rank)
