"""Dense-vs-sparse wall-clock benchmark sweep.

For each sequence size the harness generates seeded inputs, predicts a
block mask under the given policy, and times the dense reference path and
the sparse kernel on identical tensors. One warm-up iteration is run and
excluded; the reported time is the median over the remaining repeats.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .dense import AttentionInputs, dense_attention
from .layout import BlockGeometry, TokenLayout
from .maskpred import MaskPolicy, predict_mask
from .sparse import SparseAttentionJob, sparse_attention
from .synth import SynthScene, coherent_matches, synth_scene

BENCH_FIELDS = ("N", "dense_ms", "sparse_ms", "achieved_sparsity", "speedup")


@dataclass(frozen=True)
class BenchRow:
    n: int
    dense_ms: float
    sparse_ms: float
    achieved_sparsity: float
    speedup: float


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up, excluded
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return median(times)


def bench_inputs(
    n: int, head_dim: int, heads: int, seed: int, n_matches: int = 0
) -> tuple[AttentionInputs, TokenLayout]:
    """Seeded benchmark inputs: n patch tokens, no specials; optionally with
    planted cross-frame matches so the predicted masks have structure."""
    if n_matches > 0:
        frames = 2
        matches, groups = coherent_matches(frames, n // frames, n_matches, seed)
        scene = SynthScene(
            frames=frames,
            patches_per_frame=n // frames,
            head_dim=head_dim,
            matches=matches,
            c=8.0,
            heads=heads,
            direction_groups=groups,
        )
        res = synth_scene(scene, seed)
        return res.inputs, scene.layout
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((heads, n, head_dim)).astype(np.float32)
    k = rng.standard_normal((heads, n, head_dim)).astype(np.float32)
    v = rng.standard_normal((heads, n, head_dim)).astype(np.float32)
    layout = TokenLayout(frames=1, patches_per_frame=n, specials_per_frame=0)
    return AttentionInputs(q, k, v), layout


def bench_sweep(
    sizes: list[int],
    tau: float,
    rho: float,
    repeats: int = 5,
    *,
    block_q: int = 128,
    block_k: int = 64,
    head_dim: int = 64,
    heads: int = 1,
    seed: int = 0,
    threads: int = 1,
    n_matches: int = 0,
) -> list[BenchRow]:
    """Time dense vs sparse attention across sizes; medians of ``repeats``."""
    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be sorted ascending")
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3 for a stable median, got {repeats}")
    rows = []
    for n in sizes:
        inputs, layout = bench_inputs(n, head_dim, heads, seed, n_matches)
        geometry = BlockGeometry(layout.patch_tokens, block_q, block_k)
        policy = MaskPolicy(tau=tau, rho=rho, geometry=geometry)
        mask = predict_mask(inputs.q, inputs.k, policy)
        job = SparseAttentionJob(inputs=inputs, layout=layout, mask=mask, policy=policy)
        dense_ms = _median_time(lambda: dense_attention(inputs), repeats)
        sparse_ms = _median_time(lambda: sparse_attention(job, threads=threads), repeats)
        rows.append(BenchRow(
            n=n,
            dense_ms=dense_ms,
            sparse_ms=sparse_ms,
            achieved_sparsity=float(mask.achieved_sparsity().mean()),
            speedup=dense_ms / sparse_ms,
        ))
    return rows


def write_bench_csv(path_or_file, rows: list[BenchRow]) -> None:
    close = False
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        f = open(path_or_file, "w", newline="")
        close = True
    else:
        f = path_or_file
    try:
        w = csv.writer(f)
        w.writerow(BENCH_FIELDS)
        for r in rows:
            w.writerow([
                r.n,
                f"{r.dense_ms:.6g}",
                f"{r.sparse_ms:.6g}",
                f"{r.achieved_sparsity:.6g}",
                f"{r.speedup:.6g}",
            ])
    finally:
        if close:
            f.close()
