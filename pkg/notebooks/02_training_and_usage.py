"""
Training codebooks and reading their utilisation
================================================

The same budget of K entries per codebook is spent three ways on a 16-channel
dataset: one codebook over whole vectors (S=1), eight two-channel codebooks
(S=8), and one scalar codebook per channel (S=16).
"""

# %%
import numpy as np

from pqcodec import PQConfig, TrainConfig
from pqcodec.sweep import evaluate, profile_mixture
from pqcodec.trainer import fit

data = profile_mixture(4096, 16)
print("dataset", data.shape, "std", round(float(data.std()), 3))

# %%
tc = TrainConfig(iterations=20, seed=0)
for S in (1, 8, 16):
    pc, report = fit(data, PQConfig(16, S, 32), tc)
    m = evaluate(data, pc)
    print(f"S={S:<2}  mse {m['mse']:.4f}  psnr {m['psnr_db']:.2f} dB  H_n {m['h_n_mean']:.3f}  P_n {m['p_n_mean']:.3f}")

# %%
# Batch k-means never increases the training distortion, iteration to iteration
_, report = fit(data, PQConfig(16, 1, 32), tc)
print("trace", np.round(report.trace[:5], 5), "...", round(float(report.trace[-1]), 5))
print("largest step", float(np.max(np.diff(report.trace))))

# %%
# The gradient-based mode moves codewords along the commitment-loss gradient
sgd = TrainConfig(iterations=10, batch_size=256, learning_rate=1.0, mode="sgd-commitment", seed=0)
_, report = fit(data, PQConfig(16, 8, 32), sgd)
print("sgd trace", np.round(report.trace, 4))
