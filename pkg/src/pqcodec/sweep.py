"""Grid experiments over ``(d, S, K)`` and the trend claims checked on them.

The default dataset is a fixed-seed mixture of anisotropic Gaussians whose
channels sample a smooth profile over relative channel position ``t = (j + 0.5) / d``
plus channel-independent noise. Every channel has the same variance whatever
``d`` is, and a larger ``d`` resolves the same profiles more finely.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .core import IndexGrid, InvalidInputError, PQConfig, ProductCodebook
from .diagnostics import mean_usage, mse, psnr, usage_stats
from .quantiser import decode_vectors, encode_vectors
from .trainer import TrainConfig, fit, fit_linear_encoder

logger = logging.getLogger(__name__)

CSV_HEADER = ("d", "S", "K", "seed", "mse", "psnr_db", "h_n_mean", "p_n_mean", "train_ms", "match_ms")
CLAIMS = ("a", "b", "c", "d", "e")
# divisor of d for each relative subspace token; "1" and "d" are handled directly
SUBSPACE_TOKENS = {"d/8": 8, "d/4": 4, "d/2": 2}

DEFAULT_DATASET = {
    "kind": "profile_mixture",
    "n": 4096,
    "components": 16,
    "harmonics": 4,
    "scale_spread": 1.5,
    "smooth_fraction": 0.8,
    "seed": 1234,
}


def profile_mixture(
    n: int,
    d: int,
    components: int = 16,
    harmonics: int = 4,
    scale_spread: float = 1.5,
    smooth_fraction: float = 0.8,
    seed: int = 1234,
) -> np.ndarray:
    """Sample the trend dataset, shape ``(n, d)``, unit overall variance.

    Component ``c`` has a smooth mean profile (``harmonics`` random Fourier
    terms), a global scale ``exp(U(-scale_spread, scale_spread))`` and Zipf
    weight ``1/(c+1)``. Each sample adds its own smooth fluctuation
    (``smooth_fraction`` of the variance) and white per-channel noise. All draws
    except the noise are shared across ``d``.
    """
    if n < 1 or d < 1:
        raise InvalidInputError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    freq = np.arange(1, harmonics + 1)
    t = (np.arange(d) + 0.5) / d
    cos = np.cos(2 * np.pi * np.outer(freq, t))
    sin = np.sin(2 * np.pi * np.outer(freq, t))
    amp = rng.normal(0.0, 1.0 / np.sqrt(harmonics), size=(components, harmonics, 2))
    means = amp[:, :, 0] @ cos + amp[:, :, 1] @ sin
    scale = np.exp(rng.uniform(-scale_spread, scale_spread, size=components))
    weights = 1.0 / np.arange(1, components + 1)
    comp = rng.choice(components, size=n, p=weights / weights.sum())
    coef = rng.normal(0.0, 1.0 / np.sqrt(harmonics), size=(n, harmonics, 2))
    smooth = coef[:, :, 0] @ cos + coef[:, :, 1] @ sin
    noise = np.random.default_rng([seed, d]).standard_normal((n, d))
    x = means[comp] + scale[comp, None] * (
        np.sqrt(smooth_fraction) * smooth + np.sqrt(1.0 - smooth_fraction) * noise
    )
    return x / x.std()


def make_dataset(spec: dict, d: int) -> np.ndarray:
    """Build the ``(n, d)`` dataset described by a sweep ``dataset`` block."""
    spec = dict(spec)
    kind = spec.pop("kind", "profile_mixture")
    if kind == "profile_mixture":
        n = spec.pop("n", DEFAULT_DATASET["n"])
        return profile_mixture(n, d, **spec)
    if kind == "patches":
        from .io import extract_patches

        patches = extract_patches(spec["image"], spec.get("patch", 8), spec.get("stride"))
        codec = fit_linear_encoder(patches, d)
        return codec.project(patches)
    if kind == "file":
        from .io import read_dataset

        x = read_dataset(spec["path"]).astype(np.float64)
        if x.shape[1] < d:
            raise InvalidInputError(f"dataset file has d={x.shape[1]} < {d}")
        return x[:, :d]
    raise InvalidInputError(f"unknown dataset kind {kind!r}")


def resolve_subspaces(d: int, token) -> int | None:
    """Number of subspaces for ``token`` at dimension ``d``, or None if not integral."""
    if isinstance(token, int) and not isinstance(token, bool):
        return token if token >= 1 and d % token == 0 else None
    token = str(token).strip()
    if token.isdigit():
        return resolve_subspaces(d, int(token))
    if token == "d":
        return d
    if token not in SUBSPACE_TOKENS:
        raise InvalidInputError(f"unknown subspace token {token!r}")
    divisor = SUBSPACE_TOKENS[token]
    return d // divisor if d % divisor == 0 and d >= divisor else None


@dataclass(frozen=True)
class SweepSpec:
    d_values: tuple[int, ...]
    subspaces: tuple = ("1", "d/8", "d/4", "d/2", "d")
    K_values: tuple[int, ...] = (32, 128)
    seeds: tuple[int, ...] = (0, 1, 2)
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    train: TrainConfig = TrainConfig()
    beta: float = 0.25
    workers: int = 1
    slack: float = 0.02

    def __post_init__(self):
        if not self.d_values or not self.K_values or not self.seeds or not self.subspaces:
            raise InvalidInputError("sweep grid is empty")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        for token in self.subspaces:
            resolve_subspaces(8, token)  # validates the token

    @classmethod
    def from_dict(cls, raw: dict) -> SweepSpec:
        if not isinstance(raw, dict):
            raise InvalidInputError("sweep spec must be a JSON object")
        known = {"d", "S", "K", "seeds", "dataset", "train", "beta", "workers", "slack"}
        unknown = set(raw) - known
        if unknown:
            raise InvalidInputError(f"unknown sweep spec keys: {sorted(unknown)}")
        if "d" not in raw:
            raise InvalidInputError("sweep spec needs a 'd' list")
        try:
            train = TrainConfig(**raw.get("train", {}))
        except TypeError as exc:
            raise InvalidInputError(f"bad 'train' block: {exc}") from None
        dataset = dict(DEFAULT_DATASET)
        if "dataset" in raw:
            dataset = dict(raw["dataset"])
            if dataset.get("kind", "profile_mixture") == "profile_mixture":
                dataset = {**DEFAULT_DATASET, **dataset}
        return cls(
            d_values=tuple(int(v) for v in raw["d"]),
            subspaces=tuple(raw.get("S", cls.subspaces)),
            K_values=tuple(int(v) for v in raw.get("K", cls.K_values)),
            seeds=tuple(int(v) for v in raw.get("seeds", cls.seeds)),
            dataset=dataset,
            train=train,
            beta=float(raw.get("beta", 0.25)),
            workers=int(raw.get("workers", 1)),
            slack=float(raw.get("slack", 0.02)),
        )

    @classmethod
    def from_json(cls, path) -> SweepSpec:
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def cells(self) -> list[tuple[int, int, int]]:
        """Feasible ``(d, S, K)`` cells in sorted order; infeasible ones are logged."""
        out = set()
        for d in self.d_values:
            for token in self.subspaces:
                S = resolve_subspaces(d, token)
                if S is None:
                    logger.info("skipping S=%s at d=%d: not an integral divisor", token, d)
                    continue
                for K in self.K_values:
                    out.add((d, S, K))
        if not out:
            raise InvalidInputError("no feasible (d, S, K) cell in sweep spec")
        return sorted(out)


@dataclass(frozen=True)
class SweepRecord:
    d: int
    S: int
    K: int
    seed: int
    mse: float
    psnr_db: float
    h_n_mean: float
    p_n_mean: float
    train_ms: float
    match_ms: float
    h_n: tuple[float, ...] = ()
    p_n: tuple[float, ...] = ()
    trace: tuple[float, ...] = ()
    codebook: ProductCodebook | None = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.d, self.S, self.K, self.seed)


def evaluate(data: np.ndarray, pc: ProductCodebook) -> dict:
    """MSE, PSNR, utilisation and matching time of ``pc`` on ``data``.

    PSNR uses the data range (max - min) as its peak.
    """
    start = time.perf_counter()
    codes = encode_vectors(data, pc)
    match_ms = (time.perf_counter() - start) * 1e3
    recon = decode_vectors(codes, pc)
    stats = usage_stats(IndexGrid(codes[:, None, :]), pc.config.K)
    h_n, p_n = mean_usage(stats)
    peak = float(data.max() - data.min()) or 1.0
    return {
        "mse": mse(data, recon),
        "psnr_db": psnr(data, recon, peak),
        "h_n_mean": h_n,
        "p_n_mean": p_n,
        "match_ms": match_ms,
        "h_n": tuple(u.H_n for u in stats),
        "p_n": tuple(u.P_n for u in stats),
    }


_DATA_CACHE: dict = {}


def _dataset_for(spec_dataset: dict, d: int) -> np.ndarray:
    key = (json.dumps(spec_dataset, sort_keys=True), d)
    if key not in _DATA_CACHE:
        if len(_DATA_CACHE) > 8:
            _DATA_CACHE.clear()
        _DATA_CACHE[key] = make_dataset(spec_dataset, d)
    return _DATA_CACHE[key]


def run_cell(spec: SweepSpec, d: int, S: int, K: int, seed: int) -> SweepRecord:
    data = _dataset_for(spec.dataset, d)
    tc = dataclasses.replace(spec.train, seed=seed)
    start = time.perf_counter()
    pc, report = fit(data, PQConfig(d, S, K, spec.beta), tc)
    train_ms = (time.perf_counter() - start) * 1e3
    metrics = evaluate(data, pc)
    return SweepRecord(
        d=d, S=S, K=K, seed=seed, train_ms=train_ms,
        trace=tuple(float(v) for v in report.trace), codebook=pc, **metrics,
    )


def run_sweep(
    spec: SweepSpec, sink: Callable[[SweepRecord], None] | None = None
) -> list[SweepRecord]:
    """Train and evaluate every ``(cell, seed)``; returns records sorted by key.

    ``sink`` receives each record as soon as it completes (in completion order).
    """
    jobs = [(d, S, K, seed) for d, S, K in spec.cells() for seed in spec.seeds]
    records = []
    if spec.workers == 1:
        for job in jobs:
            record = run_cell(spec, *job)
            records.append(record)
            if sink:
                sink(record)
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = [pool.submit(run_cell, spec, *job) for job in jobs]
            for future in as_completed(futures):
                record = future.result()
                records.append(record)
                if sink:
                    sink(record)
    return sorted(records, key=lambda r: r.key)


# -- trend claims ------------------------------------------------------------------


@dataclass
class ClaimResult:
    claim: str
    description: str
    status: str  # "pass" | "fail" | "insufficient data"
    margin: float | None
    checks: list[dict] = field(default_factory=list)
    informational: bool = False

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class TrendVerdict:
    claims: dict[str, ClaimResult]
    slack: float

    @property
    def passed(self) -> bool:
        return all(self.claims[c].passed for c in CLAIMS if c in self.claims)

    def to_dict(self) -> dict:
        return {
            "slack": self.slack,
            "passed": self.passed,
            "claims": {k: dataclasses.asdict(v) for k, v in self.claims.items()},
        }


_DESCRIPTIONS = {
    "a": "VQ (S=1) MSE non-decreasing in d",
    "b": "PQ (S=d/2) MSE non-increasing in d",
    "c": "MSE non-increasing along S in {1, d/8, d/4, d/2}",
    "d": "mean H_n is minimal at S=1",
    "e": "mean P_n non-increasing in K",
    "saturation": "gain from S=d/2 to S=d is below 25% of the gain from S=1 to S=d/2",
}


def cell_medians(records: Iterable[SweepRecord]) -> dict[tuple[int, int, int], dict]:
    """Median ``mse``, ``h_n_mean``, ``p_n_mean`` across seeds for each cell."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.d, r.S, r.K), []).append(r)
    return {
        key: {
            "mse": float(np.median([r.mse for r in rs])),
            "h_n_mean": float(np.median([r.h_n_mean for r in rs])),
            "p_n_mean": float(np.median([r.p_n_mean for r in rs])),
            "seeds": len(rs),
        }
        for key, rs in sorted(groups.items())
    }


def _monotone(values: list[float], increasing: bool, slack: float) -> list[float]:
    """Relative margins of each adjacent pair; negative means a violation."""
    margins = []
    for prev, nxt in zip(values, values[1:]):
        scale = abs(prev) or 1.0
        if increasing:
            margins.append((nxt - (prev - slack * abs(prev))) / scale)
        else:
            margins.append(((prev + slack * abs(prev)) - nxt) / scale)
    return margins


def _finish(claim: str, checks: list[dict], informational: bool = False) -> ClaimResult:
    if not checks:
        return ClaimResult(claim, _DESCRIPTIONS[claim], "insufficient data", None, [], informational)
    margin = min(c["margin"] for c in checks)
    status = "pass" if margin >= 0 else "fail"
    return ClaimResult(claim, _DESCRIPTIONS[claim], status, margin, checks, informational)


def trend_checks(records: Iterable[SweepRecord], slack: float = 0.02) -> TrendVerdict:
    """Evaluate claims (a)-(e) on per-cell medians, plus informational saturation."""
    med = cell_medians(records)
    ds = sorted({k[0] for k in med})
    Ks = sorted({k[2] for k in med})
    claims = {}

    def series(keys, metric):
        return [med[k][metric] for k in keys]

    checks = []
    for K in Ks:
        keys = [(d, 1, K) for d in ds if (d, 1, K) in med]
        if len(keys) >= 2:
            m = _monotone(series(keys, "mse"), True, slack)
            checks.append({"K": K, "d": [k[0] for k in keys], "values": series(keys, "mse"), "margin": min(m)})
    claims["a"] = _finish("a", checks)

    checks = []
    for K in Ks:
        keys = [(d, d // 2, K) for d in ds if d % 2 == 0 and (d, d // 2, K) in med]
        if len(keys) >= 2:
            m = _monotone(series(keys, "mse"), False, slack)
            checks.append({"K": K, "d": [k[0] for k in keys], "values": series(keys, "mse"), "margin": min(m)})
    claims["b"] = _finish("b", checks)

    checks = []
    for d in ds:
        ladder = sorted({s for s in (1, d // 8, d // 4, d // 2) if s >= 1 and d % s == 0})
        for K in Ks:
            keys = [(d, s, K) for s in ladder if (d, s, K) in med]
            if len(keys) >= 2:
                m = _monotone(series(keys, "mse"), False, slack)
                checks.append({"d": d, "K": K, "S": [k[1] for k in keys], "values": series(keys, "mse"), "margin": min(m)})
    claims["c"] = _finish("c", checks)

    checks = []
    for d in ds:
        for K in Ks:
            if (d, 1, K) not in med:
                continue
            others = {k[1]: med[k]["h_n_mean"] for k in med if k[0] == d and k[2] == K and k[1] != 1}
            if not others:
                continue
            vq = med[(d, 1, K)]["h_n_mean"]
            lowest = min(others.values())
            margin = (lowest + slack * abs(lowest) - vq) / (abs(lowest) or 1.0)
            checks.append({"d": d, "K": K, "h_n_vq": vq, "h_n_min_pq": lowest, "margin": margin})
    claims["d"] = _finish("d", checks)

    checks = []
    for d, S in sorted({(k[0], k[1]) for k in med}):
        keys = [(d, S, K) for K in Ks if (d, S, K) in med]
        if len(keys) >= 2:
            m = _monotone(series(keys, "p_n_mean"), False, slack)
            checks.append({"d": d, "S": S, "K": [k[2] for k in keys], "values": series(keys, "p_n_mean"), "margin": min(m)})
    claims["e"] = _finish("e", checks)

    checks = []
    for d in ds:
        for K in Ks:
            keys = [(d, 1, K), (d, d // 2, K), (d, d, K)]
            if d >= 4 and all(k in med for k in keys):
                vq, half, full = (med[k]["mse"] for k in keys)
                coarse, fine = vq - half, half - full
                margin = (0.25 * coarse - fine) / (abs(coarse) or 1.0)
                checks.append({"d": d, "K": K, "gain_to_half": coarse, "gain_half_to_d": fine, "margin": margin})
    claims["saturation"] = _finish("saturation", checks, informational=True)

    return TrendVerdict(claims, slack)


# -- reports -----------------------------------------------------------------------


def _fmt(value: float) -> str:
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def _jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else _fmt(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def emit_report(
    records: list[SweepRecord],
    out_dir,
    verdict: TrendVerdict | None = None,
    timings: bool = False,
    slack: float = 0.02,
) -> tuple[str, str]:
    """Write ``sweep.csv`` and ``summary.json`` into ``out_dir``.

    Floats are written with ``repr`` so they parse back exactly. The
    ``train_ms``/``match_ms`` columns are left empty unless ``timings`` is set,
    which keeps the CSV a pure function of the spec and seeds.
    """
    if not records:
        raise InvalidInputError("no records to report")
    os.makedirs(out_dir, exist_ok=True)
    records = sorted(records, key=lambda r: r.key)
    verdict = verdict or trend_checks(records, slack)
    csv_path = os.path.join(out_dir, "sweep.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            row = [r.d, r.S, r.K, r.seed, _fmt(r.mse), _fmt(r.psnr_db), _fmt(r.h_n_mean), _fmt(r.p_n_mean)]
            row += [_fmt(r.train_ms), _fmt(r.match_ms)] if timings else ["", ""]
            writer.writerow(row)
    summary = {
        "records": len(records),
        "cells": [
            {"d": k[0], "S": k[1], "K": k[2], **v} for k, v in cell_medians(records).items()
        ],
        "verdict": verdict.to_dict(),
    }
    json_path = os.path.join(out_dir, "summary.json")
    with open(json_path, "w") as f:
        json.dump(_jsonable(summary), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    return csv_path, json_path


def read_report_csv(path) -> list[dict]:
    """Parse a ``sweep.csv`` back into typed rows (empty timing cells become None)."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise InvalidInputError(f"unexpected CSV header {reader.fieldnames}")
        for raw in reader:
            row = {}
            for key, text in raw.items():
                if key in ("d", "S", "K", "seed"):
                    row[key] = int(text)
                else:
                    row[key] = float(text) if text != "" else None
            rows.append(row)
    return rows
