"""Block-sparse streaming attention with online softmax accumulation.

Special-token rows and columns are never sparsified: special queries get
exact dense attention over all keys, and every patch query always attends
the special keys. Patch-patch attention is restricted to the key blocks
selected by the block mask; unselected blocks contribute exactly nothing,
as if their logits were -inf.

Each patch query row is processed as a stream: the special-key strip
first, then the selected key blocks in ascending index order, merged with
the usual running-max / running-normalizer update. Selected blocks are
grouped into panels of at most ``panel_blocks`` blocks per matmul so the
BLAS calls stay reasonably sized; contiguous runs are sliced without
copying, scattered ones are gathered. The merge makes the grouping
irrelevant to the result, and the fixed ordering makes repeated runs
bit-identical.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dense import AttentionInputs
from .layout import TokenLayout, partition_permutation
from .maskpred import BlockMask, MaskPolicy

DEFAULT_PANEL_BLOCKS = 32


@dataclass(frozen=True)
class SparseAttentionJob:
    """Inputs, token layout, and patch-patch block mask for one kernel run."""

    inputs: AttentionInputs
    layout: TokenLayout
    mask: BlockMask
    policy: MaskPolicy | None = None  # provenance echo only

    def __post_init__(self):
        n = self.inputs.tokens
        if n != self.layout.total_tokens:
            raise ValueError(
                f"inputs have {n} tokens but layout describes {self.layout.total_tokens}"
            )
        if self.mask.geometry.patch_tokens != self.layout.patch_tokens:
            raise ValueError(
                f"mask geometry covers {self.mask.geometry.patch_tokens} patch tokens, "
                f"layout has {self.layout.patch_tokens}"
            )
        if self.mask.heads != self.inputs.heads:
            raise ValueError(
                f"mask has {self.mask.heads} heads, inputs have {self.inputs.heads}"
            )
        if not self.mask.blocks.any(axis=2).all():
            raise ValueError("mask contains a patch row with no selected key block")


class FlopEstimate(NamedTuple):
    dense_flops: int
    sparse_flops: int
    theoretical_speedup: float


@dataclass
class HeadReport:
    head: int
    achieved_sparsity: float
    sparse_flops: int
    theoretical_speedup: float
    wall_ms: float


def _panel_token_indices(chunk: np.ndarray, block_k: int, patch_tokens: int):
    """Token slice or gather index array covering a chunk of key blocks."""
    start = int(chunk[0]) * block_k
    if chunk.size == int(chunk[-1]) - int(chunk[0]) + 1:
        return slice(start, min(int(chunk[-1]) * block_k + block_k, patch_tokens))
    idx = (chunk[:, None] * block_k + np.arange(block_k)[None, :]).ravel()
    if idx[-1] >= patch_tokens:
        idx = idx[idx < patch_tokens]
    return idx


def _online_update(m, l, o, s, v_panel):
    """Merge one panel of scaled logits into the running softmax state."""
    m_new = np.maximum(m, s.max(axis=1))
    alpha = np.exp(m - m_new)
    p = np.exp(s - m_new[:, None])
    l *= alpha
    l += p.sum(axis=1)
    o *= alpha[:, None]
    o += p @ v_panel
    return m_new


def _attend_patch_block(q_rows, k_spec, v_spec, k_patch, v_patch, row_mask,
                        scale, block_k, panel_blocks):
    r, d = q_rows.shape
    m = np.full(r, -np.inf, dtype=np.float32)
    l = np.zeros(r, dtype=np.float32)
    o = np.zeros((r, d), dtype=np.float32)
    if k_spec is not None:
        s = (q_rows @ k_spec.T) * np.float32(scale)
        m = _online_update(m, l, o, s, v_spec)
    selected = np.flatnonzero(row_mask)
    if selected.size == 0:
        raise ValueError("patch row with empty key-block selection reached the kernel")
    patch_tokens = k_patch.shape[0]
    for start in range(0, selected.size, panel_blocks):
        where = _panel_token_indices(selected[start:start + panel_blocks], block_k, patch_tokens)
        kt = k_patch[where]
        s = (q_rows @ kt.T) * np.float32(scale)
        m = _online_update(m, l, o, s, v_patch[where])
    return o / l[:, None]


def _attend_special_rows(q_rows, k_all, v_all, scale, row_chunk=256):
    out = np.empty_like(q_rows)
    for start in range(0, q_rows.shape[0], row_chunk):
        stop = min(start + row_chunk, q_rows.shape[0])
        logits = (q_rows[start:stop] @ k_all.T) * np.float32(scale)
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        out[start:stop] = logits @ v_all
    return out


def _run_head(out_head, q, k, v, n_spec, blocks_head, scale, block_q, block_k,
              panel_blocks, tasks=None):
    """Compute one head into ``out_head`` (permuted order). If ``tasks`` is
    given, only the listed query blocks are processed (thread worker mode);
    special rows belong to the task with query block -1."""
    k_spec = k[:n_spec] if n_spec else None
    v_spec = v[:n_spec] if n_spec else None
    k_patch, v_patch = k[n_spec:], v[n_spec:]
    patch_tokens = k_patch.shape[0]
    if tasks is None:
        tasks = range(-1 if n_spec else 0, blocks_head.shape[0])
    for qb in tasks:
        if qb < 0:
            out_head[:n_spec] = _attend_special_rows(q[:n_spec], k, v, scale)
            continue
        q0 = qb * block_q
        q1 = min(q0 + block_q, patch_tokens)
        out_head[n_spec + q0:n_spec + q1] = _attend_patch_block(
            q[n_spec + q0:n_spec + q1], k_spec, v_spec, k_patch, v_patch,
            blocks_head[qb], scale, block_k, panel_blocks,
        )


def sparse_attention(
    job: SparseAttentionJob,
    *,
    panel_blocks: int = DEFAULT_PANEL_BLOCKS,
    threads: int = 1,
    inputs_permuted: bool = False,
) -> np.ndarray:
    """Run the block-sparse kernel; returns (heads, tokens, head_dim).

    Inputs normally arrive in interleaved source order and the result is
    returned in that order; with ``inputs_permuted=True`` both are in
    [specials | patches] order instead. Results are identical either way.
    """
    inp = job.inputs
    h, n, d = inp.q.shape
    n_spec = job.layout.special_tokens
    if inputs_permuted:
        q, k, v = inp.q, inp.k, inp.v
    else:
        perm, inverse = partition_permutation(job.layout)
        q, k, v = inp.q[:, perm], inp.k[:, perm], inp.v[:, perm]
    out = np.empty((h, n, d), dtype=np.float32)
    geom = job.mask.geometry
    args = (geom.block_q, geom.block_k, panel_blocks)
    if threads <= 1:
        for head in range(h):
            _run_head(out[head], q[head], k[head], v[head], n_spec,
                      job.mask.blocks[head], inp.scale, *args)
    else:
        work = [
            (head, qb)
            for head in range(h)
            for qb in range(-1 if n_spec else 0, geom.nq_blocks)
        ]
        chunk = -(-len(work) // threads)
        def run(tasks):
            by_head: dict[int, list[int]] = {}
            for head, qb in tasks:
                by_head.setdefault(head, []).append(qb)
            for head, qbs in by_head.items():
                _run_head(out[head], q[head], k[head], v[head], n_spec,
                          job.mask.blocks[head], inp.scale, *args, tasks=qbs)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futures = [ex.submit(run, work[i:i + chunk]) for i in range(0, len(work), chunk)]
            for f in futures:
                f.result()
    if inputs_permuted:
        return out
    return np.ascontiguousarray(out[:, inverse])


def sparse_attention_stats(
    job: SparseAttentionJob, *, panel_blocks: int = DEFAULT_PANEL_BLOCKS
) -> tuple[np.ndarray, list[HeadReport]]:
    """Like sparse_attention, but also reports per-head sparsity, flop
    counts and wall time. Always single-threaded so timings are honest."""
    inp = job.inputs
    h, n, d = inp.q.shape
    n_spec = job.layout.special_tokens
    perm, inverse = partition_permutation(job.layout)
    q, k, v = inp.q[:, perm], inp.k[:, perm], inp.v[:, perm]
    geom = job.mask.geometry
    sparsity = job.mask.achieved_sparsity()
    per_head_dense, per_head_sparse = _flops_per_head(job)
    out = np.empty((h, n, d), dtype=np.float32)
    reports = []
    for head in range(h):
        t0 = time.perf_counter()
        _run_head(out[head], q[head], k[head], v[head], n_spec,
                  job.mask.blocks[head], inp.scale,
                  geom.block_q, geom.block_k, panel_blocks)
        wall_ms = (time.perf_counter() - t0) * 1e3
        reports.append(HeadReport(
            head=head,
            achieved_sparsity=float(sparsity[head]),
            sparse_flops=int(per_head_sparse[head]),
            theoretical_speedup=per_head_dense / per_head_sparse[head],
            wall_ms=wall_ms,
        ))
    return np.ascontiguousarray(out[:, inverse]), reports


def _flops_per_head(job: SparseAttentionJob) -> tuple[int, list[int]]:
    n = job.layout.total_tokens
    n_spec = job.layout.special_tokens
    n_patch = job.layout.patch_tokens
    d = job.inputs.head_dim
    dense = 2 * n * n * d
    areas = job.mask.selected_area()
    sparse = [
        2 * d * (n_spec * n + n_patch * n_spec + int(a))
        for a in areas
    ]
    return dense, sparse


def flop_estimate(job: SparseAttentionJob) -> FlopEstimate:
    """Multiply-accumulate counts of QK^T and PV for the dense baseline and
    the masked kernel (special rows/columns dense, selected blocks only)."""
    per_head_dense, per_head_sparse = _flops_per_head(job)
    dense = per_head_dense * job.inputs.heads
    sparse = sum(per_head_sparse)
    return FlopEstimate(dense, sparse, dense / sparse)
