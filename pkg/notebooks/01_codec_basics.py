"""
Encoding a latent grid with a product codebook
==============================================

A d-dimensional pixel is cut into S contiguous blocks and each block is
replaced by its nearest entry in that block's own codebook. Here we build a
small random codebook by hand, push a grid through it and look at what comes
out the other side.
"""

# %%
import numpy as np

from pqcodec import LatentGrid, PQConfig, ProductCodebook, fictive_index, pq_decode, pq_encode, unfictive_index
from pqcodec import io as pqio

rng = np.random.default_rng(0)

# d=8 channels, S=4 subspaces of 2 channels, K=16 entries per subspace
config = PQConfig(d=8, S=4, K=16)
pc = ProductCodebook.from_array(config, rng.normal(size=(config.S, config.K, config.sub_dim)))
print(config, "-> sub_dim", config.sub_dim, "bits/index", config.bits_per_index)

# %%
# A 6x5 grid of latent pixels
z_e = LatentGrid(rng.normal(size=(6, 5, 8)))
result = pq_encode(z_e, pc)
print("index grid shape", result.indices.indices.shape)
print("distortion (mse)", result.distortion)

# %%
# Decoding is a table lookup; re-encoding the reconstruction changes nothing
z_q = pq_decode(result.indices, pc)
again = pq_encode(z_q, pc)
print("idempotent:", again.indices == result.indices, "distortion", again.distortion)

# %%
# The S indices of one pixel name a single entry of the implicit product
# codebook of size K**S, which is never materialised
pixel_codes = result.indices.indices[0, 0].tolist()
n = fictive_index(pixel_codes, config.K)
print(pixel_codes, "->", n, "of", pc.fictive_size, "->", unfictive_index(n, config))

# %%
# On disk each index takes ceil(log2 K) bits behind a 28-byte header
blob = pqio.indices_to_bytes(result.indices, config.K)
print("bitstream bytes", len(blob), "=", pqio.bitstream_size(6, 5, config.S, config.K))
