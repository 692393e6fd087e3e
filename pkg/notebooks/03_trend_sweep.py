"""
A small (d, S, K) sweep and its trend verdicts
===============================================

The full acceptance grid takes about a minute; this one is cut down to two
dimensions and a single seed so it finishes in a few seconds. With one seed
and fewer cells some claims can come out differently from the full run.
"""

# %%
import tempfile

from pqcodec import sweep

spec = sweep.SweepSpec.from_dict({
    "d": [8, 16],
    "S": ["1", "d/4", "d/2", "d"],
    "K": [32, 128],
    "seeds": [0],
    "train": {"iterations": 10},
})
print("cells", spec.cells())

# %%
records = sweep.run_sweep(spec)
for r in records:
    print(f"d={r.d:<3} S={r.S:<3} K={r.K:<4} mse {r.mse:.4f}  H_n {r.h_n_mean:.3f}  P_n {r.p_n_mean:.3f}")

# %%
verdict = sweep.trend_checks(records)
for cid, claim in verdict.claims.items():
    margin = "n/a" if claim.margin is None else f"{claim.margin:+.3f}"
    print(f"({cid}) {claim.status:<17} {margin}  {claim.description}")

# %%
out_dir = tempfile.mkdtemp()
print(sweep.emit_report(records, out_dir, verdict))
