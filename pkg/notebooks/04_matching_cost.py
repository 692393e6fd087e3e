"""
What matching costs as S and K change
=====================================

An exhaustive scan does K*d multiply-adds per pixel whatever S is, so at a
fixed (d, K) a change in time along S is per-subspace overhead, while along K
time should grow roughly in proportion.
"""

# %%
from pqcodec import bench

configs = [(64, S, K) for S in (1, 4, 16, 64) for K in (64, 256)]
records = bench.bench_matching(configs, grid=(16, 16), reps=5)
for r in records:
    print(f"d={r.d} S={r.S:<3} K={r.K:<4} match {r.match_ms_median:8.3f} ms  decode {r.decode_ms_median:7.3f} ms")

# %%
report = bench.scaling_report(records)
for row in report["s_scaling"]:
    print(f"K={row['K']:<4} S={row['S']:<3} x{row['measured_ratio']:.2f} (model x1.00)")
for row in report["k_scaling"]:
    print(f"S={row['S']:<3} K={row['K']:<4} x{row['measured_ratio']:.2f} (model x{row['model_ratio']:.2f})")

# %%
# Time against pixel count: doubling the grid should roughly double the time
small, = bench.bench_matching([(32, 4, 512)], grid=(32, 32), reps=7)
large, = bench.bench_matching([(32, 4, 512)], grid=(32, 64), reps=7)
print("doubling ratio", round(large.match_ms_median / small.match_ms_median, 2))
