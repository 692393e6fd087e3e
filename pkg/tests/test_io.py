import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqcodec import IndexGrid, InvalidInputError, PQConfig, ProductCodebook
from pqcodec import io as pqio


def bit_string_payload(values, b):
    """Reference packer: format each index as a b-digit binary string."""
    bits = "".join(format(int(v), f"0{b}b") for v in values)
    bits += "0" * (-len(bits) % 8)
    return bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))


@pytest.fixture
def large_codebook(rng):
    cfg = PQConfig(128, 64, 512)
    return ProductCodebook.from_array(cfg, rng.normal(size=(64, 512, 2)))


class TestCodebookFile:
    def test_roundtrip_bit_exact(self, large_codebook, tmp_path):
        path = tmp_path / "cb.pqcb"
        pqio.write_codebook(large_codebook, path)
        back = pqio.read_codebook(path)
        assert back == large_codebook
        assert back.config.beta == large_codebook.config.beta
        blob = path.read_bytes()
        assert len(blob) == 28 + 4 * 64 * 512 * 2
        assert pqio.codebook_to_bytes(back) == blob

    def test_header_layout(self):
        pc = ProductCodebook.from_array(PQConfig(2, 1, 1, beta=0.5), [[[1.0, -2.0]]])
        blob = pqio.codebook_to_bytes(pc)
        assert blob[:4] == b"PQCB"
        assert struct.unpack("<IIIId", blob[4:28]) == (1, 2, 1, 1, 0.5)
        assert struct.unpack("<2f", blob[28:]) == (1.0, -2.0)

    def test_payload_order_book_entry_channel(self):
        books = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
        pc = ProductCodebook.from_array(PQConfig(4, 2, 3), books)
        payload = pqio.codebook_to_bytes(pc)[28:]
        assert list(struct.unpack("<12f", payload)) == list(range(12))

    def test_bad_magic(self, large_codebook):
        blob = b"XXXX" + pqio.codebook_to_bytes(large_codebook)[4:]
        with pytest.raises(pqio.BadMagicError):
            pqio.codebook_from_bytes(blob)

    def test_truncated(self, large_codebook):
        blob = pqio.codebook_to_bytes(large_codebook)
        with pytest.raises(pqio.TruncatedFileError):
            pqio.codebook_from_bytes(blob[:-1])
        with pytest.raises(pqio.TruncatedFileError):
            pqio.codebook_from_bytes(blob[:10])

    def test_version_mismatch(self, large_codebook):
        blob = bytearray(pqio.codebook_to_bytes(large_codebook))
        blob[4:8] = struct.pack("<I", 2)
        with pytest.raises(pqio.VersionMismatchError):
            pqio.codebook_from_bytes(bytes(blob))

    def test_non_finite_payload(self):
        pc = ProductCodebook.from_array(PQConfig(1, 1, 2), [[[0.0], [1.0]]])
        blob = pqio.codebook_to_bytes(pc)[:-4] + struct.pack("<f", float("nan"))
        with pytest.raises(pqio.NonFiniteError):
            pqio.codebook_from_bytes(blob)

    def test_distinct_error_codes(self):
        codes = {cls.code for cls in (pqio.BadMagicError, pqio.VersionMismatchError,
                                      pqio.TruncatedFileError, pqio.NonFiniteError)}
        assert len(codes) == 4


class TestIndexBitstream:
    def test_single_byte_layout(self):
        blob = pqio.indices_to_bytes(IndexGrid(np.array([[[1, 0, 1]]])), 2)
        assert len(blob) == 29
        assert blob[28] == 0b10100000

    def test_header_layout(self):
        blob = pqio.indices_to_bytes(IndexGrid(np.zeros((2, 3, 4), dtype=int)), 5)
        assert blob[:4] == b"PQIX"
        assert struct.unpack("<6I", blob[4:28]) == (1, 2, 3, 4, 5, 3)

    def test_large_config_size(self, rng):
        grid = IndexGrid(rng.integers(0, 512, size=(16, 16, 64)))
        blob = pqio.indices_to_bytes(grid, 512)
        assert len(blob) - 28 == 18432
        assert pqio.bitstream_size(16, 16, 64, 512) == 28 + 18432

    @pytest.mark.parametrize("K", [1, 2, 3, 128, 512, 16384])
    def test_roundtrip_and_size(self, K, rng, tmp_path):
        for h, w, S in [(1, 1, 1), (3, 5, 2), (7, 4, 3), (16, 16, 8)]:
            grid = IndexGrid(rng.integers(0, K, size=(h, w, S)))
            path = tmp_path / f"{K}_{h}_{w}_{S}.pqix"
            size = pqio.pack_indices(grid, K, path)
            b = pqio.index_bits(K)
            assert size == path.stat().st_size == 28 + -(-(h * w * S * b) // 8)
            assert path.read_bytes()[28:] == bit_string_payload(grid.indices.ravel(), b)
            back, k_back = pqio.read_index_file(path)
            assert back == grid and k_back == K
            assert pqio.unpack_indices(path) == grid

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 70000), st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_roundtrip_property(self, K, h, w, S, seed):
        grid = IndexGrid(np.random.default_rng(seed).integers(0, K, size=(h, w, S)))
        blob = pqio.indices_to_bytes(grid, K)
        back, _ = pqio.indices_from_bytes(blob)
        assert back == grid
        assert pqio.indices_to_bytes(back, K) == blob

    def test_bits(self):
        assert [pqio.index_bits(k) for k in (1, 2, 3, 4, 5, 128, 129, 512, 16384)] == [1, 1, 2, 2, 3, 7, 8, 9, 14]

    def test_pack_rejects_out_of_range(self):
        with pytest.raises(InvalidInputError):
            pqio.indices_to_bytes(IndexGrid(np.array([[[3]]])), 3)

    def test_unpack_rejects_out_of_range_value(self):
        blob = pqio.indices_to_bytes(IndexGrid(np.array([[[2]]])), 3)
        bad = blob[:28] + bytes([0b11000000])
        with pytest.raises(pqio.FormatError):
            pqio.indices_from_bytes(bad)

    def test_unpack_rejects_dirty_padding_and_trailing_bytes(self):
        blob = pqio.indices_to_bytes(IndexGrid(np.array([[[1, 0, 1]]])), 2)
        with pytest.raises(pqio.FormatError):
            pqio.indices_from_bytes(blob[:28] + bytes([0b10100001]))
        with pytest.raises(pqio.FormatError):
            pqio.indices_from_bytes(blob + b"\0")

    def test_unpack_rejects_inconsistent_bits(self):
        blob = bytearray(pqio.indices_to_bytes(IndexGrid(np.array([[[1]]])), 2))
        blob[24:28] = struct.pack("<I", 4)
        with pytest.raises(pqio.FormatError):
            pqio.indices_from_bytes(bytes(blob))

    def test_truncated(self):
        blob = pqio.indices_to_bytes(IndexGrid(np.ones((4, 4, 4), dtype=int)), 4)
        with pytest.raises(pqio.TruncatedFileError):
            pqio.indices_from_bytes(blob[:-1])


class TestDatasetFile:
    def test_roundtrip(self, rng, tmp_path):
        x = rng.normal(size=(37, 5)).astype(np.float32)
        path = tmp_path / "x.pqvd"
        pqio.write_dataset(x, path)
        blob = path.read_bytes()
        assert blob[:4] == b"PQVD" and struct.unpack("<3I", blob[4:16]) == (1, 37, 5)
        back = pqio.read_dataset(path)
        assert back.tobytes() == x.tobytes()
        assert pqio.dataset_to_bytes(back) == blob

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "x.pqvd"
        pqio.write_dataset(np.array([[1.0, np.nan]]), path)
        with pytest.raises(pqio.NonFiniteError):
            pqio.read_dataset(path)
        assert np.isnan(pqio.read_dataset(path, validate=False)[0, 1])

    def test_truncated_and_bad_magic(self):
        blob = pqio.dataset_to_bytes(np.zeros((2, 2)))
        with pytest.raises(pqio.TruncatedFileError):
            pqio.dataset_from_bytes(blob[:-2])
        with pytest.raises(pqio.BadMagicError):
            pqio.dataset_from_bytes(b"PQCB" + blob[4:])


class TestPatches:
    def test_pixels_in_raster_order(self, tmp_path):
        path = tmp_path / "a.pgm"
        pqio.write_pnm(path, np.array([[0, 51], [102, 255]], dtype=np.uint8))
        patches = pqio.extract_patches(path, 1, 1)
        assert patches.shape == (4, 1)
        assert patches.ravel().tolist() == [0.0, 0.2, 0.4, 1.0]

    def test_whole_image_patch(self, rng, tmp_path):
        img = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
        path = tmp_path / "a.ppm"
        pqio.write_pnm(path, img)
        patches = pqio.extract_patches(path, 4, 1)
        assert patches.shape == (2, 4 * 4 * 3)
        assert np.array_equal(patches[0], img[:4].reshape(-1) / 255)

    def test_quadrant_means(self, tmp_path):
        img = (np.add.outer(np.arange(8), np.arange(8)) * 15).astype(np.uint8)
        path = tmp_path / "g.pgm"
        pqio.write_pnm(path, img)
        patches = pqio.extract_patches(path, 4, 4)
        quadrants = [img[r:r + 4, c:c + 4].mean() / 255 for r in (0, 4) for c in (0, 4)]
        assert np.allclose(patches.mean(axis=1), quadrants, rtol=0, atol=1e-12)

    def test_channels_interleaved(self, tmp_path):
        img = np.array([[[1, 2, 3], [4, 5, 6]]], dtype=np.uint8)
        path = tmp_path / "c.ppm"
        pqio.write_pnm(path, img)
        patches = pqio.extract_patches(path, 1, 1)
        assert (patches * 255).round().tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_header_comments_and_16_bit(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n# max\n65535\n" + struct.pack(">2H", 0, 65535))
        pixels, maxval = pqio.read_pnm(path)
        assert maxval == 65535 and pixels.ravel().tolist() == [0, 65535]

    def test_errors(self, tmp_path):
        path = tmp_path / "p3.ppm"
        path.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(pqio.FormatError):
            pqio.extract_patches(path, 1)
        small = tmp_path / "s.pgm"
        pqio.write_pnm(small, np.zeros((2, 2), dtype=np.uint8))
        with pytest.raises(InvalidInputError):
            pqio.extract_patches(small, 3)
        short = tmp_path / "short.pgm"
        short.write_bytes(b"P5 4 4 255\n" + b"\0" * 3)
        with pytest.raises(pqio.TruncatedFileError):
            pqio.read_pnm(short)
