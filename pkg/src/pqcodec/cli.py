"""Command-line entry point: ``pqcodec <train|encode|decode|stats|sweep|bench|extract>``.

Exit codes: 0 ok, 2 usage or inconsistent inputs, 3 I/O or corrupt file,
4 numeric failure. With ``--json`` the machine-readable result is the only
thing written to stdout; logs always go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import io as pqio
from . import sweep as sweep_mod
from .core import IndexGrid, InvalidInputError, LatentGrid, PQConfig
from .diagnostics import mean_usage, usage_stats
from .quantiser import pq_decode, pq_encode
from .trainer import MODES, TrainConfig, fit, fit_linear_encoder

logger = logging.getLogger("pqcodec")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    """Bad or inconsistent flags; maps to exit code 2."""


def _global_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (u64)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress human-readable output")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="print a JSON result on stdout")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="pqcodec", parents=[common], description="Product-quantisation codec for latent vector fields.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="learn a product codebook from a PQVD dataset")
    p.add_argument("--data", required=True, help="PQVD training vectors")
    p.add_argument("--d", type=int, required=True, help="vector dimension")
    p.add_argument("--subspaces", type=int, required=True, help="number of subspaces S")
    p.add_argument("--codebook-size", type=int, required=True, help="codewords per subspace K")
    p.add_argument("--beta", type=float, default=0.25)
    p.add_argument("--mode", choices=MODES, default=MODES[0])
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--lr", type=float, default=1.0, help="learning rate (sgd-commitment mode)")
    p.add_argument("--revival-threshold", type=int, default=1)
    p.add_argument("--out", required=True, help="output PQCB file")

    p = sub.add_parser("encode", parents=[common], help="quantise vectors or an image to a PQIX bitstream")
    p.add_argument("--input", required=True, help="PQVD vectors or P5/P6 image")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="HxW layout for PQVD input (default n x 1)")

    p = sub.add_parser("decode", parents=[common], help="reconstruct PQVD vectors from a bitstream")
    p.add_argument("--input", required=True, help="PQIX bitstream")
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True, help="output PQVD file")

    p = sub.add_parser("stats", parents=[common], help="codebook utilisation of a bitstream")
    p.add_argument("--indices", required=True)
    p.add_argument("--codebook", required=True)

    p = sub.add_parser("sweep", parents=[common], help="run a (d, S, K) grid and check trend claims")
    p.add_argument("--spec", required=True, help="sweep spec JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, help="override the spec's worker count")
    p.add_argument("--timings", action="store_true", help="fill the train_ms/match_ms CSV columns")

    p = sub.add_parser("bench", parents=[common], help="time codebook matching per config")
    p.add_argument("--configs", required=True, help="JSON list of {d, S, K} or object with 'configs'")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--grid", help="HxW latent grid (default 16x16)")
    p.add_argument("--reps", type=int, help="timed repetitions (>= 5)")

    p = sub.add_parser("extract", parents=[common], help="cut a PPM/PGM image into a PQVD patch dataset")
    p.add_argument("--image", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--project", type=int, help="PCA-project patches to this many dimensions")
    p.add_argument("--out", required=True)
    return parser


class _Output:
    def __init__(self, args):
        self.json = getattr(args, "json", False)
        self.quiet = getattr(args, "quiet", False)

    def say(self, text: str) -> None:
        if not self.json and not self.quiet:
            print(text)

    def result(self, payload: dict) -> None:
        if self.json:
            print(json.dumps(payload, sort_keys=True, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _parse_grid(text: str, flag: str = "--grid") -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"{flag} must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise UsageError(f"{flag} sides must be >= 1")
    return h, w


def cmd_train(args, out: _Output) -> int:
    data = pqio.read_dataset(args.data)
    if data.shape[1] != args.d:
        raise UsageError(f"--d {args.d} does not match the dimension {data.shape[1]} of --data {args.data}")
    try:
        config = PQConfig(args.d, args.subspaces, args.codebook_size, args.beta)
    except InvalidInputError as exc:
        raise UsageError(f"--subspaces/--codebook-size/--beta: {exc}") from None
    try:
        tc = TrainConfig(
            iterations=args.iterations, batch_size=args.batch_size, learning_rate=args.lr,
            mode=args.mode, seed=getattr(args, "seed", 0), revival_threshold=args.revival_threshold,
        )
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None
    pc, report = fit(data, config, tc)
    pqio.write_codebook(pc, args.out)
    result = pq_encode(LatentGrid.from_vectors(data), pc)
    if not np.isfinite(result.distortion):
        raise FloatingPointError("training produced a non-finite distortion")
    h_n = [u.H_n for u in report.usage]
    h_mean, p_mean = mean_usage(report.usage)
    out.say(f"wrote {args.out}: d={config.d} S={config.S} K={config.K}")
    out.say(f"final mse {result.distortion:.6g}")
    out.say("H_n per subspace: " + " ".join(f"{v:.4f}" for v in h_n) + f"  (mean {h_mean:.4f})")
    out.result({
        "codebook": args.out, "d": config.d, "S": config.S, "K": config.K,
        "mse": result.distortion, "h_n": h_n, "h_n_mean": h_mean, "p_n_mean": p_mean,
        "revived": report.revived, "padded": report.padded, "trace": report.trace.tolist(),
    })
    return EXIT_OK


def _load_latents(path, grid: str | None) -> LatentGrid:
    fmt = pqio.sniff_format(path)
    if fmt == "PNM":
        pixels, maxval = pqio.read_pnm(path)
        return LatentGrid(pixels.astype(np.float64) / maxval)
    if fmt != "PQVD":
        raise pqio.FormatError(f"{path}: expected a PQVD dataset or P5/P6 image")
    vectors = pqio.read_dataset(path)
    if grid is None:
        return LatentGrid.from_vectors(vectors)
    h, w = _parse_grid(grid)
    if h * w != vectors.shape[0]:
        raise UsageError(f"--grid {grid} needs {h * w} vectors, {path} has {vectors.shape[0]}")
    return LatentGrid.from_vectors(vectors, h, w)


def cmd_encode(args, out: _Output) -> int:
    pc = pqio.read_codebook(args.codebook)
    z_e = _load_latents(args.input, args.grid)
    if z_e.d != pc.config.d:
        raise UsageError(f"--input dimension {z_e.d} does not match --codebook dimension {pc.config.d}")
    result = pq_encode(z_e, pc)
    size = pqio.pack_indices(result.indices, pc.config.K, args.out)
    cfg = pc.config
    out.say(f"wrote {args.out}: {z_e.h}x{z_e.w} grid, S={cfg.S}, {cfg.bits_per_index} bits/index")
    out.say(f"distortion (mse) {result.distortion:.6g}, size {size} bytes")
    out.result({
        "bitstream": args.out, "h": z_e.h, "w": z_e.w, "S": cfg.S, "K": cfg.K,
        "bits_per_index": cfg.bits_per_index, "distortion": result.distortion,
        "size_bytes": size, "expected_size_bytes": pqio.bitstream_size(z_e.h, z_e.w, cfg.S, cfg.K),
    })
    return EXIT_OK


def _load_consistent(index_path, codebook_path):
    pc = pqio.read_codebook(codebook_path)
    grid, K = pqio.read_index_file(index_path)
    if grid.S != pc.config.S or K != pc.config.K:
        raise UsageError(
            f"--indices has S={grid.S}, K={K} but --codebook has S={pc.config.S}, K={pc.config.K}"
        )
    return grid, pc


def cmd_decode(args, out: _Output) -> int:
    grid, pc = _load_consistent(args.input, args.codebook)
    z_q = pq_decode(grid, pc)
    pqio.write_dataset(z_q.vectors(), args.out)
    out.say(f"wrote {args.out}: {z_q.h * z_q.w} vectors of dimension {z_q.d}")
    out.result({"dataset": args.out, "n": z_q.h * z_q.w, "d": z_q.d, "h": z_q.h, "w": z_q.w})
    return EXIT_OK


def cmd_stats(args, out: _Output) -> int:
    grid, pc = _load_consistent(args.indices, args.codebook)
    stats = usage_stats(grid, pc.config.K)
    h_mean, p_mean = mean_usage(stats)
    for s, u in enumerate(stats):
        out.say(f"subspace {s}: H_n {u.H_n:.4f}  P_n {u.P_n:.4f}  used {int(np.count_nonzero(u.counts))}/{u.K}")
    out.say(f"mean: H_n {h_mean:.4f}  P_n {p_mean:.4f}")
    out.result({
        "S": grid.S, "K": pc.config.K,
        "subspaces": [
            {"H": u.H, "H_n": u.H_n, "P": u.P, "P_n": u.P_n, "counts": u.counts.tolist()} for u in stats
        ],
        "h_n_mean": h_mean, "p_n_mean": p_mean,
    })
    return EXIT_OK


def _load_json(path, flag: str):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{flag} {path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def cmd_sweep(args, out: _Output) -> int:
    raw = _load_json(args.spec, "--spec")
    if isinstance(raw, dict) and "seeds" not in raw and hasattr(args, "seed"):
        raw = {**raw, "seeds": [args.seed, args.seed + 1, args.seed + 2]}
    if args.workers is not None:
        raw = {**raw, "workers": args.workers}
    try:
        spec = sweep_mod.SweepSpec.from_dict(raw)
        spec.cells()
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise UsageError(f"--spec {args.spec}: {exc}") from None
    os.makedirs(args.out_dir, exist_ok=True)
    partial = os.path.join(args.out_dir, "sweep.partial.csv")
    with open(partial, "w") as f:
        f.write(",".join(sweep_mod.CSV_HEADER) + "\n")

    def sink(r):
        with open(partial, "a") as f:
            f.write(f"{r.d},{r.S},{r.K},{r.seed},{r.mse!r},{r.psnr_db!r},{r.h_n_mean!r},{r.p_n_mean!r},"
                    f"{r.train_ms!r},{r.match_ms!r}\n")
        logger.info("done d=%d S=%d K=%d seed=%d mse=%.5g", r.d, r.S, r.K, r.seed, r.mse)

    records = sweep_mod.run_sweep(spec, sink=sink)
    verdict = sweep_mod.trend_checks(records, spec.slack)
    csv_path, json_path = sweep_mod.emit_report(records, args.out_dir, verdict, timings=args.timings)
    os.remove(partial)
    out.say(f"wrote {csv_path} ({len(records)} records) and {json_path}")
    for cid, claim in verdict.claims.items():
        margin = "n/a" if claim.margin is None else f"{claim.margin:+.4f}"
        tag = " (informational)" if claim.informational else ""
        out.say(f"claim ({cid}) {claim.status:<17} margin {margin}  {claim.description}{tag}")
    out.result({"csv": csv_path, "summary": json_path, "records": len(records), **sweep_mod._jsonable(verdict.to_dict())})
    return EXIT_OK


def cmd_bench(args, out: _Output) -> int:
    raw = _load_json(args.configs, "--configs")
    options = raw if isinstance(raw, dict) else {"configs": raw}
    grid = _parse_grid(args.grid) if args.grid else tuple(options.get("grid", (16, 16)))
    reps = args.reps if args.reps is not None else int(options.get("reps", 5))
    try:
        records = bench_mod.bench_matching(
            options["configs"], grid=grid, reps=reps,
            warmup=int(options.get("warmup", 2)), seed=getattr(args, "seed", 0),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"--configs {args.configs}: {exc}") from None
    bench_mod.write_bench_csv(records, args.out)
    report = bench_mod.scaling_report(records)
    for r in records:
        out.say(f"d={r.d:<4} S={r.S:<4} K={r.K:<6} match {r.match_ms_median:9.3f} ms  decode {r.decode_ms_median:8.3f} ms")
    for row in report["s_scaling"]:
        out.say(f"S-scaling d={row['d']} K={row['K']} S={row['S']}: measured x{row['measured_ratio']:.2f} (model x1.00)")
    for row in report["k_scaling"]:
        out.say(f"K-scaling d={row['d']} S={row['S']} K={row['K']}: measured x{row['measured_ratio']:.2f} (model x{row['model_ratio']:.2f})")
    out.result({
        "csv": args.out,
        "records": [
            {"d": r.d, "S": r.S, "K": r.K, "h": r.h, "w": r.w,
             "match_ms_median": r.match_ms_median, "decode_ms_median": r.decode_ms_median}
            for r in records
        ],
        **report,
    })
    return EXIT_OK


def cmd_extract(args, out: _Output) -> int:
    try:
        patches = pqio.extract_patches(args.image, args.patch, args.stride)
    except InvalidInputError as exc:
        raise UsageError(f"--patch/--stride: {exc}") from None
    if args.project is not None:
        if not 1 <= args.project <= patches.shape[1]:
            raise UsageError(f"--project must be in [1, {patches.shape[1]}]")
        patches = fit_linear_encoder(patches, args.project).project(patches)
    pqio.write_dataset(patches, args.out)
    out.say(f"wrote {args.out}: {patches.shape[0]} vectors of dimension {patches.shape[1]}")
    out.result({"dataset": args.out, "n": patches.shape[0], "d": patches.shape[1]})
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "encode": cmd_encode, "decode": cmd_decode, "stats": cmd_stats,
    "sweep": cmd_sweep, "bench": cmd_bench, "extract": cmd_extract,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    out = _Output(args)
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"pqcodec {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pqio.NonFiniteError as exc:
        print(f"pqcodec {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (pqio.FormatError, OSError) as exc:
        print(f"pqcodec {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, InvalidInputError, np.linalg.LinAlgError) as exc:
        print(f"pqcodec {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
