"""Domain types and subspace algebra shared by the rest of the package.

A latent pixel of dimension ``d`` is cut into ``S`` contiguous channel blocks of
``d // S`` channels; block ``s`` holds channels ``[s*d/S, (s+1)*d/S)`` and is
quantised against its own sub-codebook of ``K`` entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class PQError(Exception):
    """Base class for all errors raised by pqcodec."""


class InvalidInputError(PQError, ValueError):
    """An argument has the wrong shape, range or contains non-finite values."""


class InvalidStateError(PQError, RuntimeError):
    """An object is not in a usable state (e.g. an empty codebook)."""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PQConfig:
    """The ``(d, S, K)`` triple plus the commitment weight ``beta``.

    ``S == 1`` is plain vector quantisation, ``S == d`` scalar quantisation.
    """

    d: int
    S: int
    K: int
    beta: float = 0.25

    def __post_init__(self):
        for name in ("d", "S", "K"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.d % self.S != 0:
            raise InvalidInputError(f"d={self.d} is not divisible by S={self.S}")
        beta = float(self.beta)
        if not np.isfinite(beta) or beta < 0:
            raise InvalidInputError(f"beta must be finite and >= 0, got {self.beta!r}")
        object.__setattr__(self, "beta", beta)

    @property
    def sub_dim(self) -> int:
        return self.d // self.S

    @property
    def fictive_size(self) -> int:
        """Size of the implicit product codebook, ``K**S`` (exact integer)."""
        return self.K**self.S

    @property
    def bits_per_index(self) -> int:
        return max(1, (self.K - 1).bit_length())


@dataclass(frozen=True, eq=False)
class SubCodebook:
    """``K`` codewords of one subspace, stored as a read-only float32 ``(K, sub_dim)`` array.

    float32 is the on-disk precision, so a codebook survives a file roundtrip
    bit-exactly.
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim == 1:
            entries = entries[:, None]
        if entries.ndim != 2:
            raise InvalidInputError(f"codebook entries must be 2-D, got shape {entries.shape}")
        entries = entries.astype(np.float32)
        if not np.all(np.isfinite(entries)):
            raise InvalidInputError("codebook entries must be finite")
        object.__setattr__(self, "entries", _frozen(entries))

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SubCodebook):
            return NotImplemented
        return self.entries.shape == other.entries.shape and bool(
            np.array_equal(self.entries.view(np.uint32), other.entries.view(np.uint32))
        )

    def __hash__(self):
        return hash(self.entries.tobytes())


@dataclass(frozen=True, eq=False)
class ProductCodebook:
    """``S`` sub-codebooks, one per subspace, sharing a :class:`PQConfig`."""

    config: PQConfig
    books: tuple[SubCodebook, ...] = field(default=())

    def __post_init__(self):
        books = tuple(b if isinstance(b, SubCodebook) else SubCodebook(b) for b in self.books)
        cfg = self.config
        if len(books) != cfg.S:
            raise InvalidInputError(f"expected {cfg.S} sub-codebooks, got {len(books)}")
        for s, book in enumerate(books):
            if book.K != cfg.K or book.dim != cfg.sub_dim:
                raise InvalidInputError(
                    f"sub-codebook {s} has shape {book.entries.shape}, "
                    f"expected ({cfg.K}, {cfg.sub_dim})"
                )
        object.__setattr__(self, "books", books)

    @classmethod
    def from_array(cls, config: PQConfig, array) -> ProductCodebook:
        """Build from an ``(S, K, d // S)`` array."""
        array = np.asarray(array)
        expected = (config.S, config.K, config.sub_dim)
        if array.shape != expected:
            raise InvalidInputError(f"codebook array has shape {array.shape}, expected {expected}")
        return cls(config, tuple(SubCodebook(book) for book in array))

    def as_array(self) -> np.ndarray:
        """Stacked float32 ``(S, K, d // S)`` copy of all codewords."""
        return np.stack([b.entries for b in self.books])

    @property
    def fictive_size(self) -> int:
        return self.config.fictive_size

    def __eq__(self, other):
        if not isinstance(other, ProductCodebook):
            return NotImplemented
        return self.config == other.config and self.books == other.books

    def __hash__(self):
        return hash((self.config, self.books))


@dataclass(frozen=True, eq=False)
class LatentGrid:
    """An ``h x w`` field of ``d``-dimensional vectors, stored as ``(h, w, d)`` float64."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise InvalidInputError(f"latent grid must have shape (h, w, d), got {data.shape}")
        if min(data.shape) < 1:
            raise InvalidInputError(f"latent grid has an empty axis: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("latent grid contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_vectors(cls, vectors, h: int | None = None, w: int | None = None) -> LatentGrid:
        """Lay ``n`` vectors out as an ``h x w`` grid (default ``n x 1``)."""
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise InvalidInputError(f"vectors must be 2-D (n, d), got {vectors.shape}")
        n = vectors.shape[0]
        if h is None and w is None:
            h, w = n, 1
        elif h is None:
            h = n // w
        elif w is None:
            w = n // h
        if h * w != n:
            raise InvalidInputError(f"cannot lay out {n} vectors as a {h}x{w} grid")
        return cls(vectors.reshape(h, w, vectors.shape[1]))

    @property
    def h(self) -> int:
        return self.data.shape[0]

    @property
    def w(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def vectors(self) -> np.ndarray:
        """Pixel-major ``(h*w, d)`` view."""
        return self.data.reshape(-1, self.d)


@dataclass(frozen=True, eq=False)
class IndexGrid:
    """An ``h x w`` field of ``S``-tuples of sub-codebook indices, stored as ``(h, w, S)`` int64."""

    indices: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices)
        if indices.ndim != 3:
            raise InvalidInputError(f"index grid must have shape (h, w, S), got {indices.shape}")
        if indices.size and not np.issubdtype(indices.dtype, np.integer):
            if not np.all(np.mod(indices, 1) == 0):
                raise InvalidInputError("indices must be integers")
        indices = indices.astype(np.int64)
        if indices.size and indices.min() < 0:
            raise InvalidInputError("indices must be non-negative")
        object.__setattr__(self, "indices", _frozen(indices))

    @property
    def h(self) -> int:
        return self.indices.shape[0]

    @property
    def w(self) -> int:
        return self.indices.shape[1]

    @property
    def S(self) -> int:
        return self.indices.shape[2]

    def check_range(self, K: int) -> None:
        if self.indices.size and self.indices.max() >= K:
            raise InvalidInputError(
                f"index {int(self.indices.max())} out of range for K={K}"
            )

    def __eq__(self, other):
        if not isinstance(other, IndexGrid):
            return NotImplemented
        return bool(np.array_equal(self.indices, other.indices)) and (
            self.indices.shape == other.indices.shape
        )

    def __hash__(self):
        return hash((self.indices.shape, self.indices.tobytes()))


def split_pixel(pixel, config: PQConfig) -> list[np.ndarray]:
    """Cut one ``d``-vector into ``S`` contiguous subvectors.

    >>> [p.tolist() for p in split_pixel([1.0, 2.0, 3.0, 4.0], PQConfig(4, 2, 8))]
    [[1.0, 2.0], [3.0, 4.0]]
    """
    pixel = np.asarray(pixel)
    if pixel.ndim != 1 or pixel.shape[0] != config.d:
        raise InvalidInputError(f"pixel must be a vector of length {config.d}, got shape {pixel.shape}")
    sub = config.sub_dim
    return [pixel[s * sub : (s + 1) * sub].copy() for s in range(config.S)]


def join_subvectors(parts: Sequence) -> np.ndarray:
    """Concatenate subvectors back into one pixel (inverse of :func:`split_pixel`)."""
    parts = [np.asarray(p) for p in parts]
    if not parts:
        raise InvalidInputError("need at least one subvector")
    if any(p.ndim != 1 for p in parts):
        raise InvalidInputError("subvectors must be 1-D")
    if len({p.shape[0] for p in parts}) != 1:
        raise InvalidInputError(f"ragged subvectors: lengths {[p.shape[0] for p in parts]}")
    return np.concatenate(parts)


def _check_index_tuple(indices: Iterable, K: int) -> list[int]:
    out = []
    for i in indices:
        if isinstance(i, (bool, np.bool_)) or int(i) != i:
            raise InvalidInputError(f"index {i!r} is not an integer")
        i = int(i)
        if not 0 <= i < K:
            raise InvalidInputError(f"index {i} out of range for K={K}")
        out.append(i)
    return out


def fictive_index(indices: Sequence[int], K: int) -> int:
    """Mixed-radix code of an index tuple in the ``K**S`` product codebook.

    Subspace 0 is the most significant digit. Python integers keep this exact
    for any ``(K, S)``.

    >>> fictive_index([1, 0, 1], 2)
    5
    """
    if K < 1:
        raise InvalidInputError(f"K must be >= 1, got {K}")
    code = 0
    for i in _check_index_tuple(indices, K):
        code = code * K + i
    return code


def unfictive_index(code: int, config: PQConfig) -> list[int]:
    """Inverse of :func:`fictive_index` for ``config.S`` digits of radix ``config.K``."""
    if isinstance(code, (bool, np.bool_)) or int(code) != code:
        raise InvalidInputError(f"code {code!r} is not an integer")
    code = int(code)
    if not 0 <= code < config.fictive_size:
        raise InvalidInputError(f"code {code} out of range [0, {config.K}**{config.S})")
    digits = [0] * config.S
    for s in range(config.S - 1, -1, -1):
        code, digits[s] = divmod(code, config.K)
    return digits
