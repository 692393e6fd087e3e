"""
From an image to quantised patches
==================================

A synthetic grey-scale image is written as PGM, cut into 8x8 patches, projected
onto its leading principal directions and product-quantised. The projection
stands in for a learned encoder.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from pqcodec import PQConfig, TrainConfig, fit_linear_encoder, psnr
from pqcodec import io as pqio
from pqcodec.quantiser import decode_vectors, encode_vectors
from pqcodec.trainer import fit

rng = np.random.default_rng(3)
yy, xx = np.mgrid[0:128, 0:128] / 128
image = 0.5 + 0.25 * np.sin(9 * xx + 4 * yy) * np.cos(5 * yy) + 0.05 * rng.normal(size=(128, 128))
path = Path(tempfile.mkdtemp()) / "waves.pgm"
pqio.write_pnm(path, np.clip(image * 255, 0, 255).round().astype(np.uint8))

# %%
patches = pqio.extract_patches(path, patch=8, stride=4)
print("patches", patches.shape)
codec = fit_linear_encoder(patches, 16)
z = codec.project(patches)
print("variance kept by 16 components", round(codec.captured_variance, 4))

# %%
for S in (1, 4, 16):
    pc, _ = fit(z, PQConfig(16, S, 64), TrainConfig(iterations=15))
    recon = codec.reconstruct(decode_vectors(encode_vectors(z, pc), pc))
    print(f"S={S:<2} patch PSNR {psnr(patches, recon):.2f} dB")
