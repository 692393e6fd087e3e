"""Acceptance criteria, one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line; ``conftest.py`` prints them at the end of
the run, and each line is also printed as the test finishes (visible with -s).
"""

import hashlib
import itertools
import json
import math
import time

import numpy as np
import pytest

from oracles import central_difference, entropy_nats, flat_vq, linear_scan, scalar_quantise
from pqcodec import (
    IndexGrid,
    LatentGrid,
    PQConfig,
    ProductCodebook,
    TrainConfig,
    fictive_index,
    join_subvectors,
    nearest_codeword,
    pq_decode,
    pq_encode,
    psnr,
    split_pixel,
    train_codebooks,
    unfictive_index,
)
from pqcodec import bench, sweep
from pqcodec import io as pqio
from pqcodec.cli import main
from pqcodec.diagnostics import UsageStats
from pqcodec.quantiser import codeword_gradients, loss_gradients, pq_loss, straight_through, straight_through_grad

RESULTS: dict[str, str] = {}

TREND_SPEC = {
    "d": [8, 16, 32],
    "S": ["1", "d/4", "d/2", "d"],
    "K": [32, 128],
    "seeds": [0, 1, 2],
    "train": {"iterations": 20},
}


class Criterion:
    """Collects named checks; records one summary line when the block exits."""

    def __init__(self, number: int, title: str, budget_s: float | None = None):
        self.number, self.title, self.budget = number, title, budget_s
        self.failures: list[str] = []
        self.notes: list[str] = []

    def check(self, ok: bool, what: str) -> None:
        if not ok:
            self.failures.append(what)

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        if self.budget is not None and elapsed >= self.budget:
            self.failures.append(f"runtime {elapsed:.1f}s over {self.budget:.0f}s budget")
        status = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.failures[:3] + self.notes)
        line = f"[{status}] criterion {self.number} {self.title} ({elapsed:.1f}s){': ' + detail if detail else ''}"
        RESULTS[str(self.number)] = line
        print(line)
        if exc_type is None:
            assert not self.failures, line
        return False


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def sha(path) -> str:
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_criterion_1_exactness(tmp_path):
    rng = np.random.default_rng(1)
    with Criterion(1, "exactness suite", budget_s=30) as c:
        for d in range(1, 17):
            x = rng.normal(size=d)
            for S in (s for s in range(1, d + 1) if d % s == 0):
                parts = split_pixel(x, PQConfig(d, S, 2))
                c.check(len(parts) == S and all(p.shape == (d // S,) for p in parts), f"split shape d={d} S={S}")
                c.check(np.array_equal(join_subvectors(parts), x), f"join(split) d={d} S={S}")

        pairs = [(K, S) for S in range(1, 14) for K in (1, 2, 3, 4, 7, 10, 21, 100, 10_000) if K**S <= 10_000]
        for K, S in pairs:
            cfg = PQConfig(S, S, K)
            codes = [fictive_index(t, K) for t in itertools.product(range(K), repeat=S)]
            c.check(codes == list(range(K**S)), f"fictive index order K={K} S={S}")
            c.check(all(tuple(unfictive_index(n, cfg)) == t
                        for n, t in zip(codes, itertools.product(range(K), repeat=S))), f"fictive inverse K={K} S={S}")

        for d, S, K in [(8, 1, 16), (8, 2, 16), (8, 8, 4), (12, 3, 7), (16, 4, 33)]:
            pc = ProductCodebook.from_array(PQConfig(d, S, K), rng.normal(size=(S, K, d // S)))
            z = LatentGrid(rng.normal(size=(5, 6, d)))
            first = pq_encode(z, pc)
            again = pq_encode(pq_decode(first.indices, pc), pc)
            c.check(again.indices == first.indices and again.distortion == 0.0, f"idempotence {(d, S, K)}")

        pc = ProductCodebook.from_array(PQConfig(128, 64, 512), rng.normal(size=(64, 512, 2)))
        pqio.write_codebook(pc, tmp_path / "cb.pqcb")
        c.check(pqio.read_codebook(tmp_path / "cb.pqcb") == pc, "PQCB roundtrip")
        c.check(pqio.codebook_to_bytes(pqio.read_codebook(tmp_path / "cb.pqcb")) == (tmp_path / "cb.pqcb").read_bytes(),
                "PQCB rewrite bytes")
        x = rng.normal(size=(100, 24)).astype(np.float32)
        pqio.write_dataset(x, tmp_path / "x.pqvd")
        c.check(pqio.read_dataset(tmp_path / "x.pqvd").tobytes() == x.tobytes(), "PQVD roundtrip")

        for K in (1, 2, 3, 128, 512, 16384):
            b = max(1, math.ceil(math.log2(K))) if K > 1 else 1
            for h, w, S in [(1, 1, 1), (16, 16, 64), (7, 3, 5)]:
                grid = IndexGrid(rng.integers(0, K, size=(h, w, S)))
                path = tmp_path / f"{K}.pqix"
                size = pqio.pack_indices(grid, K, path)
                c.check(size == path.stat().st_size == 28 + math.ceil(h * w * S * b / 8), f"size K={K} {(h, w, S)}")
                c.check(pqio.read_index_file(path) == (grid, K), f"PQIX roundtrip K={K} {(h, w, S)}")


def test_criterion_2_oracles():
    rng = np.random.default_rng(2)
    with Criterion(2, "oracle suite", budget_s=60) as c:
        pc = ProductCodebook.from_array(PQConfig(4, 1, 24), rng.normal(size=(1, 24, 4)))
        book = pc.books[0]
        entries = book.entries.astype(float).tolist()
        queries = rng.normal(size=(10_000, 4))
        # a slice of queries sits exactly on codewords to exercise ties with duplicates
        queries[:100] = book.entries[rng.integers(0, 24, size=100)]
        mismatches = sum(nearest_codeword(q, book)[0] != linear_scan(q, entries) for q in queries)
        c.check(mismatches == 0, f"{mismatches} of 10^4 queries disagree with the linear scan")

        pc = ProductCodebook.from_array(PQConfig(6, 1, 16), rng.normal(size=(1, 16, 6)))
        x = rng.normal(size=(300, 6))
        got = pq_encode(LatentGrid.from_vectors(x), pc).indices.indices[:, 0, 0]
        c.check(np.array_equal(got, flat_vq(x, pc.books[0].entries)), "S=1 differs from flat VQ")

        pc = ProductCodebook.from_array(PQConfig(5, 5, 9), rng.normal(size=(5, 9, 1)))
        x = rng.normal(size=(300, 5))
        levels = [b.entries[:, 0].astype(float).tolist() for b in pc.books]
        got = pq_encode(LatentGrid.from_vectors(x), pc).indices.indices[:, 0, :]
        c.check(np.array_equal(got, scalar_quantise(x, levels)), "S=d differs from scalar quantiser")

        data = rng.normal(-1.5, 3.0, size=(257, 1))
        start = ProductCodebook.from_array(PQConfig(1, 1, 1), [[[10.0]]])
        trained, _ = train_codebooks(data, start, TrainConfig(iterations=1))
        mean = math.fsum(data.ravel()) / data.size
        c.check(abs(float(trained.books[0].entries[0, 0]) - mean) <= 1e-6 * max(1.0, abs(mean)),
                "K=1 one-step mean")


def test_criterion_3_gradients():
    rng = np.random.default_rng(3)
    with Criterion(3, "gradient suite", budget_s=30) as c:
        worst = {"codeword": 0.0, "encoder": 0.0, "straight-through": 0.0}
        for _ in range(100):
            S = int(rng.choice([1, 2, 3]))
            d, K, beta = S * int(rng.integers(1, 4)), int(rng.integers(2, 6)), float(rng.uniform(0.1, 1.0))
            pc = ProductCodebook.from_array(PQConfig(d, S, K, beta), rng.normal(size=(S, K, d // S)))
            z_e = LatentGrid(rng.normal(size=(2, 3, d)))
            res = pq_encode(z_e, pc)
            codes = res.indices.indices.reshape(-1, S)
            target = z_e.vectors()

            def commitment(books):
                z_q = np.concatenate([books[s][codes[:, s]] for s in range(S)], axis=1)
                return beta * np.mean((target - z_q) ** 2)

            fd = central_difference(commitment, pc.as_array().astype(np.float64))
            worst["codeword"] = max(worst["codeword"], rel_err(codeword_gradients(z_e, res.indices, pc), fd))

            g_e, _ = loss_gradients(z_e, res.z_q, beta)
            zq = res.z_q.data
            fd = central_difference(lambda x: pq_loss(LatentGrid(x), LatentGrid(zq), beta).codebook_loss, z_e.data)
            worst["encoder"] = max(worst["encoder"], rel_err(g_e, fd))

            y_target = rng.normal(size=z_e.data.shape)
            y = straight_through(z_e, res.z_q).data
            offset = zq - z_e.data
            fd = central_difference(lambda x: np.sum((x + offset - y_target) ** 2), z_e.data)
            worst["straight-through"] = max(worst["straight-through"], rel_err(straight_through_grad(2 * (y - y_target)), fd))
        for name, err in worst.items():
            c.check(err < 1e-4, f"{name} gradient relative error {err:.2e}")
        c.notes.append("max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_4_metrics():
    rng = np.random.default_rng(4)
    with Criterion(4, "metric suite") as c:
        for _ in range(1000):
            K = int(rng.integers(1, 40))
            counts = rng.integers(0, 5, size=K) * rng.integers(0, 2, size=K)
            if counts.sum() == 0:
                counts[rng.integers(0, K)] = 1
            u = UsageStats.from_counts(counts)
            ok = 0.0 <= u.H_n <= 1.0 + 1e-12 and 1.0 / K - 1e-12 <= u.P_n <= 1.0 + 1e-12
            ok &= abs(u.H - entropy_nats(counts.tolist())) <= 1e-9
            c.check(ok, f"bounds for counts {counts.tolist()}")
        for K in (2, 4, 17, 512):
            u = UsageStats.from_counts(np.full(K, 3))
            c.check(abs(u.H_n - 1) <= 1e-9 and abs(u.P_n - 1) <= 1e-9, f"uniform K={K}")
            delta = np.zeros(K, int)
            delta[K // 2] = 9
            u = UsageStats.from_counts(delta)
            c.check(u.H_n == 0.0 and abs(u.P_n - 1 / K) <= 1e-9, f"delta K={K}")
        u = UsageStats.from_counts([2, 1, 1, 0])
        H = 1.5 * math.log(2)  # -(1/2 ln 1/2 + 2 * 1/4 ln 1/4)
        c.check(abs(u.H - H) <= 1e-9, "hand K=4 entropy")
        c.check(abs(u.H_n - H / math.log(4)) <= 1e-9 and abs(u.H_n - 0.75) <= 1e-9, "hand K=4 H_n")
        c.check(abs(u.P_n - math.exp(H) / 4) <= 1e-9 and abs(u.P_n - 2**1.5 / 4) <= 1e-9, "hand K=4 P_n")
        c.check(abs(psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) - 20.0) <= 1e-9, "PSNR 20 dB")
        c.check(abs(psnr(np.zeros(4), np.full(4, 2.55), peak=255) - 40.0) <= 1e-9, "PSNR 40 dB")
        c.check(psnr(np.ones(3), np.ones(3)) == math.inf, "PSNR identical")


@pytest.fixture(scope="module")
def trend_run():
    spec = sweep.SweepSpec.from_dict(TREND_SPEC)
    start = time.perf_counter()
    records = sweep.run_sweep(spec)
    return spec, records, time.perf_counter() - start


def test_criterion_5_trends(trend_run, tmp_path):
    spec, records, elapsed = trend_run
    with Criterion(5, "trend reproduction") as c:
        c.check(elapsed < 15 * 60, f"sweep took {elapsed:.0f}s")
        expected = {(d, S, K) for d in (8, 16, 32) for S in (1, d // 4, d // 2, d) for K in (32, 128)}
        c.check({(r.d, r.S, r.K) for r in records} == expected, "grid coverage")
        c.check(len(records) == 3 * len(expected), "three seeds per cell")
        verdict = sweep.trend_checks(records, slack=0.02)
        sweep.emit_report(records, tmp_path, verdict)
        for cid in sweep.CLAIMS:
            claim = verdict.claims[cid]
            c.check(claim.status == "pass", f"claim ({cid}) {claim.status} margin {claim.margin}")
        c.notes.append("margins " + " ".join(f"({k}) {verdict.claims[k].margin:+.3f}" for k in sweep.CLAIMS))
        c.notes.append(f"sweep {elapsed:.0f}s")


def test_criterion_6_lloyd_monotone(trend_run):
    _, records, _ = trend_run
    with Criterion(6, "Lloyd monotonicity") as c:
        worst = max(float(np.max(np.diff(r.trace))) for r in records)
        for r in records:
            c.check(bool(np.all(np.diff(r.trace) <= 1e-10)), f"run {r.key} trace rises")
        c.check(all(len(r.trace) == 20 for r in records), "trace length")
        c.notes.append(f"largest step {worst:+.2e} over {len(records)} runs")


def test_criterion_7_bench(tmp_path):
    with Criterion(7, "benchmark sanity") as c:
        cfg = [(32, 4, 512)]
        small = bench.bench_matching(cfg, grid=(32, 32), reps=9)[0]
        large = bench.bench_matching(cfg, grid=(32, 64), reps=9)[0]
        ratio = large.match_ms_median / small.match_ms_median
        c.check(1.6 <= ratio <= 2.6, f"doubling ratio {ratio:.2f}")
        configs = [(16, S, K) for S in (1, 4, 16) for K in (32, 128)]
        records = bench.bench_matching(configs, grid=(16, 16), reps=5)
        bench.write_bench_csv(records, tmp_path / "bench.csv")
        c.check(len((tmp_path / "bench.csv").read_text().splitlines()) == 1 + len(configs), "CSV rows")
        report = bench.scaling_report(records)
        c.check(len(report["s_scaling"]) == 6 and len(report["k_scaling"]) == 6, "scaling report rows")
        s_over = max(r["measured_ratio"] for r in report["s_scaling"])
        c.notes.append(f"doubling x{ratio:.2f}; max S-overhead x{s_over:.2f} (informational)")


def test_criterion_8_determinism(tmp_path, capsys):
    rng = np.random.default_rng(8)
    data = tmp_path / "train.pqvd"
    pqio.write_dataset(rng.normal(size=(400, 16)), data)
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"d": [8, 16], "S": ["1", "d/2"], "K": [8], "seeds": [0, 1],
                                "dataset": {"n": 300}, "train": {"iterations": 5}}))
    with Criterion(8, "determinism") as c:
        hashes = []
        for run in ("a", "b"):
            out = tmp_path / run
            out.mkdir()
            for mode in ("batch-kmeans", "sgd-commitment"):
                c.check(main(["train", "--data", str(data), "--d", "16", "--subspaces", "4", "--codebook-size", "16",
                              "--mode", mode, "--seed", "42", "--out", str(out / f"{mode}.pqcb"), "--quiet"]) == 0,
                        "train exit code")
                c.check(main(["encode", "--input", str(data), "--codebook", str(out / f"{mode}.pqcb"),
                              "--out", str(out / f"{mode}.pqix"), "--grid", "20x20", "--quiet"]) == 0, "encode exit code")
            c.check(main(["sweep", "--spec", str(spec), "--out-dir", str(out / "sweep"), "--quiet"]) == 0, "sweep exit code")
            names = [f"{m}.{ext}" for m in ("batch-kmeans", "sgd-commitment") for ext in ("pqcb", "pqix")]
            names += ["sweep/sweep.csv", "sweep/summary.json"]
            hashes.append({n: sha(out / n) for n in names})
        for name in hashes[0]:
            c.check(hashes[0][name] == hashes[1][name], f"{name} differs between runs")
    capsys.readouterr()
