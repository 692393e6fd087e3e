"""Codebook matching (encode) and lookup (decode) timing versus S and K.

An exhaustive scan costs ``K * d`` multiply-adds per pixel for any ``S``, so at
fixed ``(d, K)`` any measured dependence on ``S`` is per-subspace overhead.
"""

from __future__ import annotations

import csv
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import InvalidInputError, PQConfig, ProductCodebook
from .quantiser import decode_vectors, encode_vectors


@dataclass(frozen=True)
class BenchRecord:
    d: int
    S: int
    K: int
    h: int
    w: int
    warmup: int
    reps: int
    match_ms_median: float
    decode_ms_median: float
    match_samples: tuple[float, ...]
    decode_samples: tuple[float, ...]

    @property
    def model_madds(self) -> int:
        """Multiply-adds of one exhaustive encode of the grid."""
        return self.h * self.w * self.K * self.d


def _time_ms(fn, warmup: int, reps: int) -> list[float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        start = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - start) / 1e6)
    return samples


def synthetic_grid(d: int, pixels: int, seed: int = 0) -> np.ndarray:
    """Standard-normal pixels; identical for every config sharing ``d``."""
    return np.random.default_rng([seed, d]).standard_normal((pixels, d))


def synthetic_codebook(config: PQConfig, seed: int = 0) -> ProductCodebook:
    rng = np.random.default_rng([seed, config.d, config.S, config.K])
    return ProductCodebook.from_array(
        config, rng.standard_normal((config.S, config.K, config.sub_dim))
    )


def _as_config(c) -> PQConfig:
    if isinstance(c, PQConfig):
        return c
    if isinstance(c, dict):
        return PQConfig(int(c["d"]), int(c["S"]), int(c["K"]))
    d, S, K = c
    return PQConfig(int(d), int(S), int(K))


def bench_matching(configs, grid=(16, 16), reps: int = 5, warmup: int = 2, seed: int = 0) -> list[BenchRecord]:
    """Median encode and decode times per config on a fixed-seed synthetic grid.

    Args:
        configs: ``PQConfig`` objects, ``(d, S, K)`` tuples or dicts.
        grid: ``(h, w)`` latent grid size.
        reps: Timed repetitions (at least 5); warmup runs are discarded.
    """
    if reps < 5:
        raise InvalidInputError(f"reps must be >= 5, got {reps}")
    h, w = grid
    if h < 1 or w < 1:
        raise InvalidInputError(f"bad grid size {grid}")
    records = []
    for cfg in map(_as_config, configs):
        data = synthetic_grid(cfg.d, h * w, seed)
        pc = synthetic_codebook(cfg, seed)
        codes = encode_vectors(data, pc)
        match = _time_ms(lambda: encode_vectors(data, pc), warmup, reps)
        decode = _time_ms(lambda: decode_vectors(codes, pc), warmup, reps)
        records.append(
            BenchRecord(
                d=cfg.d, S=cfg.S, K=cfg.K, h=h, w=w, warmup=warmup, reps=reps,
                match_ms_median=statistics.median(match),
                decode_ms_median=statistics.median(decode),
                match_samples=tuple(match),
                decode_samples=tuple(decode),
            )
        )
    return records


def parallel_speedup(config, grid=(32, 32), workers: int = 2, reps: int = 5, seed: int = 0) -> float:
    """Serial median over threaded median for one config, pixels split across workers.

    Informational only; timing checks always use the serial path.
    """
    cfg = _as_config(config)
    h, w = grid
    data = synthetic_grid(cfg.d, h * w, seed)
    pc = synthetic_codebook(cfg, seed)
    chunks = np.array_split(data, workers)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        def threaded():
            return np.concatenate(list(pool.map(lambda c: encode_vectors(c, pc), chunks)))

        serial = statistics.median(_time_ms(lambda: encode_vectors(data, pc), 1, reps))
        parallel = statistics.median(_time_ms(threaded, 1, reps))
    return serial / parallel


def scaling_report(records: list[BenchRecord]) -> dict:
    """Measured versus model time ratios along S (fixed d, K) and along K (fixed d, S).

    The exhaustive-scan model predicts a ratio of 1 along S and ``K / K_min``
    along K.
    """
    by_dk: dict = {}
    by_ds: dict = {}
    for r in records:
        by_dk.setdefault((r.d, r.K, r.h, r.w), []).append(r)
        by_ds.setdefault((r.d, r.S, r.h, r.w), []).append(r)
    s_rows, k_rows = [], []
    for (d, K, h, w), rs in sorted(by_dk.items()):
        if len(rs) < 2:
            continue
        rs = sorted(rs, key=lambda r: r.S)
        base = rs[0]
        for r in rs:
            s_rows.append({
                "d": d, "K": K, "S": r.S,
                "match_ms": r.match_ms_median,
                "measured_ratio": r.match_ms_median / base.match_ms_median,
                "model_ratio": 1.0,
            })
    for (d, S, h, w), rs in sorted(by_ds.items()):
        if len(rs) < 2:
            continue
        rs = sorted(rs, key=lambda r: r.K)
        base = rs[0]
        for r in rs:
            k_rows.append({
                "d": d, "S": S, "K": r.K,
                "match_ms": r.match_ms_median,
                "measured_ratio": r.match_ms_median / base.match_ms_median,
                "model_ratio": r.K / base.K,
            })
    return {"s_scaling": s_rows, "k_scaling": k_rows}


def write_bench_csv(records: list[BenchRecord], path) -> None:
    """One row per record; trailing ``sample_i`` columns hold the raw match times (ms)."""
    if not records:
        raise InvalidInputError("no benchmark records")
    width = max(r.reps for r in records)
    header = ["d", "S", "K", "h", "w", "match_ms_median", "decode_ms_median"]
    header += [f"sample_{i}" for i in range(width)]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            samples = [repr(s) for s in r.match_samples] + [""] * (width - r.reps)
            writer.writerow(
                [r.d, r.S, r.K, r.h, r.w, repr(r.match_ms_median), repr(r.decode_ms_median), *samples]
            )
