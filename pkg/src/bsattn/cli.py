"""Command-line interface.

Subcommands: attend, mask, analyze, correspond, layerdrop, synth, bench.
Tensors travel as .bsat files, block masks as .bsm files, results as CSV
(header row, floats with 6 significant digits).
"""

from __future__ import annotations

import argparse
import csv
import sys

from .analysis import (
    DropMode,
    DropPolicy,
    drop_schedule,
    quadrant_stats,
    top_k_correspondences,
)
from .bench import bench_sweep, write_bench_csv
from .dense import AttentionInputs, dense_attention
from .layout import BlockGeometry, TokenLayout, patch_token_indices
from .maskpred import MaskPolicy, predict_mask, read_mask, write_mask
from .sparse import SparseAttentionJob, sparse_attention, sparse_attention_stats
from .synth import SynthScene, coherent_matches, synth_scene
from .tensorio import read_tensor, write_tensor


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _add_layout_flags(p: argparse.ArgumentParser, specials_default: int = 5) -> None:
    p.add_argument("--frames", type=int, default=1, help="number of frames F")
    p.add_argument("--patches-per-frame", type=int, default=None,
                   help="patch tokens per frame (inferred from tensor size if omitted)")
    p.add_argument("--specials-per-frame", type=int, default=specials_default,
                   help=f"special tokens per frame (default {specials_default})")
    p.add_argument("--grid", type=str, default=None, metavar="RxC",
                   help="patch grid, e.g. 37x37")
    p.add_argument("--specials-last", action="store_true",
                   help="frames store patches first, then specials")


def _add_block_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--block-q", type=int, default=128, help="query block size (tokens)")
    p.add_argument("--block-k", type=int, default=64, help="key block size (tokens)")


def _parse_grid(text: str | None) -> tuple[int, int] | None:
    if text is None:
        return None
    try:
        r, c = text.lower().split("x")
        return (int(r), int(c))
    except ValueError:
        raise SystemExit(f"bad --grid {text!r}, expected RxC like 37x37")


def _layout_from_args(args, total_tokens: int) -> TokenLayout:
    f, s = args.frames, args.specials_per_frame
    p = args.patches_per_frame
    if p is None:
        if total_tokens % f:
            raise SystemExit(f"{total_tokens} tokens do not divide into {f} frames")
        p = total_tokens // f - s
        if p < 1:
            raise SystemExit(
                f"inferred {p} patches per frame from {total_tokens} tokens, "
                f"{f} frames, {s} specials"
            )
    layout = TokenLayout(
        frames=f,
        patches_per_frame=p,
        specials_per_frame=s,
        patch_grid=_parse_grid(args.grid),
        specials_first=not args.specials_last,
    )
    if layout.total_tokens != total_tokens:
        raise SystemExit(
            f"layout describes {layout.total_tokens} tokens but tensors have {total_tokens}"
        )
    return layout


def _cmd_attend(args) -> None:
    q = read_tensor(args.q)
    k = read_tensor(args.k)
    v = read_tensor(args.v)
    inputs = AttentionInputs(q, k, v)
    if args.mode == "dense":
        out = dense_attention(inputs)
        write_tensor(args.out, out)
        return
    if args.mask is None:
        raise SystemExit("sparse mode requires --mask")
    layout = _layout_from_args(args, inputs.tokens)
    geometry = BlockGeometry(layout.patch_tokens, args.block_q, args.block_k)
    mask = read_mask(args.mask, geometry)
    job = SparseAttentionJob(inputs=inputs, layout=layout, mask=mask)
    if args.report:
        out, reports = sparse_attention_stats(job, panel_blocks=args.panel_blocks)
        w = csv.writer(sys.stdout)
        w.writerow(["head", "achieved_sparsity", "sparse_flops",
                    "theoretical_speedup", "wall_ms"])
        for r in reports:
            w.writerow([r.head, _fmt(r.achieved_sparsity), r.sparse_flops,
                        _fmt(r.theoretical_speedup), _fmt(r.wall_ms)])
    else:
        out = sparse_attention(job, panel_blocks=args.panel_blocks, threads=args.threads)
    write_tensor(args.out, out)


def _cmd_mask(args) -> None:
    q = read_tensor(args.q)
    k = read_tensor(args.k)
    if q.shape != k.shape or q.ndim != 3:
        raise SystemExit(f"q/k must share a (heads, tokens, dim) shape, got {q.shape}, {k.shape}")
    layout = _layout_from_args(args, q.shape[1])
    geometry = BlockGeometry(layout.patch_tokens, args.block_q, args.block_k)
    policy = MaskPolicy(tau=args.tau, rho=args.rho, geometry=geometry)
    pidx = patch_token_indices(layout)
    mask = predict_mask(q[:, pidx], k[:, pidx], policy)
    write_mask(args.out, mask)
    if args.stats:
        w = csv.writer(sys.stdout)
        w.writerow(["head", "achieved_sparsity"])
        for h, s in enumerate(mask.achieved_sparsity()):
            w.writerow([h, _fmt(float(s))])


def _cmd_analyze(args) -> None:
    attn_map = read_tensor(args.map)
    if attn_map.ndim == 2:
        attn_map = attn_map[None]
    layout = _layout_from_args(args, attn_map.shape[1])
    stats = quadrant_stats(attn_map, layout)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["layer", "head", "quadrant", "mean", "max"])
        for quad in stats.means:
            for h in range(stats.heads):
                w.writerow([args.layer, h, quad,
                            _fmt(stats.means[quad][h]), _fmt(stats.maxes[quad][h])])
        for quad, (mm, ms, xm, xs) in stats.aggregate().items():
            w.writerow([args.layer, "mean", quad, _fmt(mm), _fmt(xm)])
            w.writerow([args.layer, "std", quad, _fmt(ms), _fmt(xs)])
    finally:
        if args.csv:
            out.close()


def _cmd_correspond(args) -> None:
    attn_map = read_tensor(args.map)
    layout = _layout_from_args(args, attn_map.shape[-1])
    rows = top_k_correspondences(attn_map, layout, args.k, args.cross_view_only)
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["q_frame", "q_row", "q_col", "k_frame", "k_row", "k_col", "weight"])
        for r in rows:
            w.writerow([r.q_frame, r.q_row, r.q_col,
                        r.k_frame, r.k_row, r.k_col, _fmt(r.weight)])
    finally:
        if args.csv:
            out.close()


def _cmd_layerdrop(args) -> None:
    policy = DropPolicy(mode=DropMode(args.mode), n_skipped=args.n, layers=args.layers)
    skipped = drop_schedule(policy)
    if args.join:
        with open(args.join, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or "layer" not in reader.fieldnames:
                raise SystemExit(f"{args.join} needs a 'layer' column to join on")
            w = csv.writer(sys.stdout)
            w.writerow(list(reader.fieldnames) + ["skipped"])
            for row in reader:
                vals = [row[c] for c in reader.fieldnames]
                w.writerow(vals + [int(int(row["layer"]) in skipped)])
        return
    w = csv.writer(sys.stdout)
    w.writerow(["skip_layer"])
    for i in sorted(skipped):
        w.writerow([i])


def _cmd_synth(args) -> None:
    matches, groups = coherent_matches(
        args.frames, args.patches, args.matches, args.seed, args.run_length
    )
    scene = SynthScene(
        frames=args.frames,
        patches_per_frame=args.patches,
        head_dim=args.dim,
        matches=matches,
        c=args.c,
        heads=args.heads,
        specials_per_frame=args.specials_per_frame,
        direction_groups=groups,
    )
    res = synth_scene(scene, args.seed)
    write_tensor(f"{args.out_prefix}_q.bsat", res.inputs.q)
    write_tensor(f"{args.out_prefix}_k.bsat", res.inputs.k)
    write_tensor(f"{args.out_prefix}_v.bsat", res.inputs.v)
    with open(f"{args.out_prefix}_matches.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame_a", "token_i", "frame_b", "token_j"])
        for m in scene.matches:
            w.writerow(m)


def _cmd_bench(args) -> None:
    sizes = sorted(int(s) for s in args.sizes.split(","))
    rows = bench_sweep(
        sizes,
        args.tau,
        args.rho,
        repeats=args.repeats,
        block_q=args.block_q,
        block_k=args.block_k,
        head_dim=args.dim,
        heads=args.heads,
        seed=args.seed,
        threads=args.threads,
        n_matches=args.matches,
    )
    if args.csv:
        write_bench_csv(args.csv, rows)
    else:
        write_bench_csv(sys.stdout, rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bsattn",
        description="Adaptive block-sparse global attention toolkit",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attend", help="run dense or block-sparse attention")
    p.add_argument("--mode", choices=["dense", "sparse"], required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--k", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--mask", default=None, help=".bsm block mask (sparse mode)")
    p.add_argument("--out", required=True)
    p.add_argument("--report", action="store_true",
                   help="print per-head sparsity/flops/time CSV to stdout")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--panel-blocks", type=int, default=32,
                   help="selected key blocks per matmul panel")
    _add_layout_flags(p)
    _add_block_flags(p)
    p.set_defaults(fn=_cmd_attend)

    p = sub.add_parser("mask", help="predict a block mask from Q and K")
    p.add_argument("--q", required=True)
    p.add_argument("--k", required=True)
    p.add_argument("--tau", type=float, required=True, help="CDF coverage threshold")
    p.add_argument("--rho", type=float, required=True, help="sparse ratio upper bound")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", action="store_true",
                   help="print per-head achieved sparsity CSV to stdout")
    _add_layout_flags(p)
    _add_block_flags(p)
    p.set_defaults(fn=_cmd_mask)

    p = sub.add_parser("analyze", help="quadrant statistics of an attention map")
    p.add_argument("--map", required=True, help=".bsat post-softmax map, (H,N,N) or (N,N)")
    p.add_argument("--csv", default=None, help="output CSV path (stdout if omitted)")
    p.add_argument("--layer", type=int, default=0, help="layer label for the CSV")
    _add_layout_flags(p)
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("correspond", help="top-k patch-patch correspondences")
    p.add_argument("--map", required=True)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--cross-view-only", action="store_true")
    p.add_argument("--csv", default=None)
    _add_layout_flags(p)
    p.set_defaults(fn=_cmd_correspond)

    p = sub.add_parser("layerdrop", help="layer-skip schedules")
    p.add_argument("--mode", choices=[m.value for m in DropMode], required=True)
    p.add_argument("--n", type=int, required=True, help="number of layers to skip")
    p.add_argument("--layers", type=int, default=24, help="total global-attention layers")
    p.add_argument("--join", default=None,
                   help="metrics CSV with a 'layer' column; adds a 'skipped' column")
    p.set_defaults(fn=_cmd_layerdrop)

    p = sub.add_parser("synth", help="generate a synthetic correspondence scene")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--patches", type=int, required=True, help="patch tokens per frame")
    p.add_argument("--matches", type=int, required=True, help="planted match count")
    p.add_argument("--c", type=float, default=8.0, help="match signal scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64, help="head dimension")
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--specials-per-frame", type=int, default=0)
    p.add_argument("--run-length", type=int, default=32,
                   help="contiguous run length of planted matches")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("bench", help="dense vs sparse timing sweep")
    p.add_argument("--sizes", required=True, help="comma-separated token counts")
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--csv", default=None)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--matches", type=int, default=0,
                   help="planted matches per size (0 = unstructured inputs)")
    _add_block_flags(p)
    p.set_defaults(fn=_cmd_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
