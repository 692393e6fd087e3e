"""Bit-exact file formats and PPM/PGM patch ingestion.

All integers and floats are little-endian.

``PQCB`` codebook (28-byte header)::

    magic "PQCB" | version u32 | d u32 | S u32 | K u32 | beta f64
    payload: S*K*(d/S) float32, book-major, then entry, then channel

``PQIX`` index bitstream (28-byte header)::

    magic "PQIX" | version u32 | h u32 | w u32 | S u32 | K u32 | bits u32
    payload: h*w*S indices of ``bits = max(1, ceil(log2 K))`` bits each,
    pixel-major then subspace, most-significant bit first, zero-padded

``PQVD`` vector dataset (16-byte header)::

    magic "PQVD" | version u32 | n u32 | d u32
    payload: n*d float32, row-major
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .core import IndexGrid, InvalidInputError, PQConfig, PQError, ProductCodebook

VERSION = 1

_CODEBOOK_HEADER = struct.Struct("<4sIIIId")
_INDEX_HEADER = struct.Struct("<4sIIIIII")
_DATASET_HEADER = struct.Struct("<4sIII")


class FormatError(PQError):
    """A file does not follow its declared format."""

    code = "malformed"


class BadMagicError(FormatError):
    code = "bad-magic"


class VersionMismatchError(FormatError):
    code = "version-mismatch"


class TruncatedFileError(FormatError):
    code = "truncated"


class NonFiniteError(FormatError):
    code = "non-finite"


def index_bits(K: int) -> int:
    """Bits per stored index: ``ceil(log2 K)``, at least 1."""
    return max(1, (int(K) - 1).bit_length())


def bitstream_size(h: int, w: int, S: int, K: int) -> int:
    """Total ``PQIX`` file size in bytes."""
    return _INDEX_HEADER.size + -(-(h * w * S * index_bits(K)) // 8)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _write_bytes(path, blob: bytes) -> None:
    with open(path, "wb") as f:
        f.write(blob)


def _parse_file(path, parse, *args):
    """Run ``parse`` on the bytes of ``path``, naming the file in format errors."""
    blob = _read_bytes(path)
    try:
        return parse(blob, *args)
    except FormatError as exc:
        raise type(exc)(f"{os.fspath(path)}: {exc}") from None


def _check_header(blob: bytes, header: struct.Struct, magic: bytes) -> tuple:
    if len(blob) < 4 or blob[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {blob[:4]!r}")
    if len(blob) < header.size:
        raise TruncatedFileError(f"header needs {header.size} bytes, file has {len(blob)}")
    fields = header.unpack_from(blob)
    if fields[1] != VERSION:
        raise VersionMismatchError(f"unsupported version {fields[1]} (expected {VERSION})")
    return fields


def _check_payload(blob: bytes, offset: int, expected: int) -> bytes:
    payload = blob[offset:]
    if len(payload) < expected:
        raise TruncatedFileError(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FormatError(f"{len(payload) - expected} unexpected trailing bytes")
    return payload


def codebook_to_bytes(pc: ProductCodebook) -> bytes:
    cfg = pc.config
    header = _CODEBOOK_HEADER.pack(b"PQCB", VERSION, cfg.d, cfg.S, cfg.K, cfg.beta)
    return header + pc.as_array().astype("<f4").tobytes()


def codebook_from_bytes(blob: bytes) -> ProductCodebook:
    _, _, d, S, K, beta = _check_header(blob, _CODEBOOK_HEADER, b"PQCB")
    try:
        cfg = PQConfig(d, S, K, beta)
    except InvalidInputError as exc:
        raise FormatError(f"invalid codebook header: {exc}") from None
    payload = _check_payload(blob, _CODEBOOK_HEADER.size, 4 * S * K * cfg.sub_dim)
    books = np.frombuffer(payload, dtype="<f4").reshape(S, K, cfg.sub_dim)
    if not np.all(np.isfinite(books)):
        raise NonFiniteError("codebook payload contains non-finite values")
    return ProductCodebook.from_array(cfg, books.astype(np.float32))


def write_codebook(pc: ProductCodebook, path) -> None:
    _write_bytes(path, codebook_to_bytes(pc))


def read_codebook(path) -> ProductCodebook:
    return _parse_file(path, codebook_from_bytes)


def indices_to_bytes(indices: IndexGrid, K: int) -> bytes:
    if K < 1 or K > 2**32 - 1:
        raise InvalidInputError(f"K={K} does not fit the bitstream header")
    indices.check_range(K)
    b = index_bits(K)
    flat = indices.indices.reshape(-1).astype(np.uint64)
    shifts = np.arange(b - 1, -1, -1, dtype=np.uint64)
    bits = ((flat[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    payload = np.packbits(bits.reshape(-1)).tobytes()
    header = _INDEX_HEADER.pack(b"PQIX", VERSION, indices.h, indices.w, indices.S, K, b)
    return header + payload


def indices_from_bytes(blob: bytes) -> tuple[IndexGrid, int]:
    _, _, h, w, S, K, b = _check_header(blob, _INDEX_HEADER, b"PQIX")
    if K < 1 or S < 1:
        raise FormatError(f"invalid bitstream header: S={S}, K={K}")
    if b != index_bits(K):
        raise FormatError(f"header declares {b} bits per index, K={K} needs {index_bits(K)}")
    count = h * w * S
    payload = _check_payload(blob, _INDEX_HEADER.size, -(-(count * b) // 8))
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    tail = bits[count * b :]
    if tail.any():
        raise FormatError("non-zero padding bits")
    bits = bits[: count * b].reshape(count, b).astype(np.int64)
    values = bits @ (np.int64(1) << np.arange(b - 1, -1, -1, dtype=np.int64))
    if count and values.max() >= K:
        raise FormatError(f"index {int(values.max())} out of range for K={K}")
    return IndexGrid(values.reshape(h, w, S)), K


def pack_indices(indices: IndexGrid, K: int, path) -> int:
    """Write a ``PQIX`` file; returns its size in bytes."""
    blob = indices_to_bytes(indices, K)
    _write_bytes(path, blob)
    return len(blob)


def read_index_file(path) -> tuple[IndexGrid, int]:
    """Read a ``PQIX`` file, returning the grid and its codebook size."""
    return _parse_file(path, indices_from_bytes)


def unpack_indices(path) -> IndexGrid:
    return read_index_file(path)[0]


def dataset_to_bytes(vectors) -> bytes:
    vectors = np.asarray(vectors)
    if vectors.ndim != 2:
        raise InvalidInputError(f"dataset must be 2-D (n, d), got shape {vectors.shape}")
    n, d = vectors.shape
    return _DATASET_HEADER.pack(b"PQVD", VERSION, n, d) + vectors.astype("<f4").tobytes()


def dataset_from_bytes(blob: bytes, validate: bool = True) -> np.ndarray:
    _, _, n, d = _check_header(blob, _DATASET_HEADER, b"PQVD")
    payload = _check_payload(blob, _DATASET_HEADER.size, 4 * n * d)
    vectors = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float32)
    if validate and not np.all(np.isfinite(vectors)):
        raise NonFiniteError("dataset contains non-finite values")
    return vectors


def write_dataset(vectors, path) -> None:
    _write_bytes(path, dataset_to_bytes(vectors))


def read_dataset(path, validate: bool = True) -> np.ndarray:
    """Load a ``PQVD`` file as a float32 ``(n, d)`` array."""
    return _parse_file(path, dataset_from_bytes, validate)


# -- PPM / PGM -----------------------------------------------------------------


def _pnm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(blob[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pnm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM (P5) or PPM (P6) image.

    Returns:
        ``(pixels, maxval)`` with pixels of shape ``(H, W, C)``, ``C`` in {1, 3}.
    """
    blob = _read_bytes(path)
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported image format {magic!r}; only P5/P6 are read")
    tokens, offset = _pnm_tokens(blob[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"bad PNM header {tokens!r}") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"bad PNM dimensions {width}x{height}, maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    expected = width * height * channels * dtype.itemsize
    raster = blob[2 + offset : 2 + offset + expected]
    if len(raster) < expected:
        raise TruncatedFileError(f"raster has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster, dtype=dtype).reshape(height, width, channels)
    return pixels.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pnm(path, pixels, maxval: int = 255) -> None:
    """Write ``(H, W)`` or ``(H, W, 1)`` as P5 and ``(H, W, 3)`` as P6."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    height, width, channels = pixels.shape
    if channels not in (1, 3):
        raise InvalidInputError(f"need 1 or 3 channels, got {channels}")
    magic = b"P6" if channels == 3 else b"P5"
    dtype = ">u2" if maxval > 255 else np.uint8
    header = magic + f"\n{width} {height}\n{maxval}\n".encode()
    _write_bytes(path, header + pixels.astype(dtype).tobytes())


def extract_patches(path, patch: int, stride: int | None = None) -> np.ndarray:
    """Cut a PPM/PGM image into flattened square patches.

    Patches are taken in raster order of their top-left corner; each is
    flattened row-major with channels interleaved and scaled to [0, 1].

    Returns:
        float64 array of shape ``(n_patches, patch * patch * C)``.
    """
    pixels, maxval = read_pnm(path)
    stride = patch if stride is None else stride
    height, width, channels = pixels.shape
    if patch < 1 or stride < 1:
        raise InvalidInputError("patch and stride must be >= 1")
    if patch > height or patch > width:
        raise InvalidInputError(f"patch {patch} larger than image {height}x{width}")
    values = pixels.astype(np.float64) / maxval
    out = [
        values[r : r + patch, c : c + patch].reshape(-1)
        for r in range(0, height - patch + 1, stride)
        for c in range(0, width - patch + 1, stride)
    ]
    return np.stack(out)


def sniff_format(path) -> str:
    """One of ``"PQCB"``, ``"PQIX"``, ``"PQVD"``, ``"PNM"`` or ``"unknown"``."""
    with open(path, "rb") as f:
        head = f.read(4)
    if head in (b"PQCB", b"PQIX", b"PQVD"):
        return head.decode()
    if head[:2] in (b"P5", b"P6"):
        return "PNM"
    return "unknown"


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
