"""Training-free block mask prediction from pooled query/key similarity.

Queries and keys (patch tokens only) are average-pooled over token blocks,
the pooled similarity is softmaxed into per-row probability distributions
over key blocks, and blocks are selected per query-block row by combining
two criteria:

  * a CDF threshold tau: keep the shortest descending-probability prefix
    whose cumulative mass reaches tau;
  * a sparse ratio rho: keep at least k = floor(nk_blocks * (1 - rho))
    top-ranked blocks, so near-uniform rows still retain a floor.

Both criteria are prefixes of one deterministic ranking (probability
descending, ties by ascending block index), so masks are nested under
either parameter.

.bsm mask file layout (little-endian): magic "BSMK", then heads, nq_blocks,
nk_blocks as u32, then one bitset per (head, query block) row, packed
LSB-first into ceil(nk_blocks / 8) bytes per row.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .layout import BlockGeometry
from .tensorio import as_f32, row_softmax

MASK_MAGIC = b"BSMK"

_MASK_HEADER_FMT = "<4sIII"
_MASK_HEADER_SIZE = struct.calcsize(_MASK_HEADER_FMT)


@dataclass(frozen=True)
class MaskPolicy:
    """Selection parameters: CDF threshold, sparse ratio, block geometry."""

    tau: float
    rho: float
    geometry: BlockGeometry

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")

    @property
    def min_blocks(self) -> int:
        """Per-row floor k = floor(nk_blocks * (1 - rho)), at least 1."""
        nk = self.geometry.nk_blocks
        # epsilon keeps exact products like 100 * (1 - 0.9) from flooring low
        return min(nk, max(1, int(nk * (1.0 - self.rho) + 1e-9)))


@dataclass(frozen=True)
class BlockMask:
    """Per-head boolean key-block selection for every query-block row."""

    blocks: np.ndarray  # (heads, nq_blocks, nk_blocks) bool
    geometry: BlockGeometry

    def __post_init__(self):
        b = np.ascontiguousarray(self.blocks, dtype=bool)
        if b.ndim != 3:
            raise ValueError(f"blocks must be (heads, nq, nk), got {b.shape}")
        g = self.geometry
        if b.shape[1] != g.nq_blocks or b.shape[2] != g.nk_blocks:
            raise ValueError(
                f"mask shape {b.shape[1:]} inconsistent with geometry "
                f"({g.nq_blocks}, {g.nk_blocks})"
            )
        if not b.any(axis=2).all():
            raise ValueError("every query-block row must select at least one key block")
        object.__setattr__(self, "blocks", b)

    @property
    def heads(self) -> int:
        return self.blocks.shape[0]

    def achieved_sparsity(self) -> np.ndarray:
        """Per-head fraction of patch-patch area (in entries) not selected.

        Ragged tail blocks are weighted by their true token counts, so this
        matches the skipped fraction of QK^T / PV multiply-accumulates.
        """
        g = self.geometry
        area = np.outer(g.q_block_sizes(), g.k_block_sizes()).astype(np.float64)
        total = float(g.patch_tokens) ** 2
        selected = (self.blocks * area).sum(axis=(1, 2))
        return 1.0 - selected / total

    def selected_area(self) -> np.ndarray:
        """Per-head count of selected patch-patch entries."""
        g = self.geometry
        area = np.outer(g.q_block_sizes(), g.k_block_sizes())
        return (self.blocks * area).sum(axis=(1, 2))


def block_pool(x, block: int) -> np.ndarray:
    """Average-pool (heads, tokens, dim) over token blocks of size ``block``.

    The ragged tail block averages over its actual length.
    """
    x = as_f32(x, "x")
    if x.ndim != 3:
        raise ValueError(f"block_pool expects (heads, tokens, dim), got {x.shape}")
    if block < 1:
        raise ValueError(f"block size must be >= 1, got {block}")
    n = x.shape[1]
    if block == 1:
        return x.copy()
    offsets = np.arange(0, n, block)
    sums = np.add.reduceat(x, offsets, axis=1)
    counts = np.diff(np.append(offsets, n)).astype(np.float32)
    return sums / counts[None, :, None]


def pooled_scores(q_pooled, k_pooled, head_dim: int) -> np.ndarray:
    """Softmaxed pooled similarity, shape (heads, nq_blocks, nk_blocks).

    Rows are probability distributions over key blocks. The similarity is
    scaled by 1/sqrt(head_dim) to match the attention temperature.
    """
    qp = as_f32(q_pooled, "q_pooled")
    kp = as_f32(k_pooled, "k_pooled")
    if qp.ndim != 3 or kp.ndim != 3:
        raise ValueError(f"pooled tensors must be 3-D, got {qp.shape} and {kp.shape}")
    if qp.shape[0] != kp.shape[0] or qp.shape[2] != kp.shape[2]:
        raise ValueError(f"pooled shapes incompatible: {qp.shape} vs {kp.shape}")
    scale = 1.0 / float(np.sqrt(head_dim))
    out = np.empty((qp.shape[0], qp.shape[1], kp.shape[1]), dtype=np.float32)
    for h in range(qp.shape[0]):
        out[h] = row_softmax(qp[h] @ kp[h].T, scale)
    return out


def select_blocks(scores, policy: MaskPolicy) -> BlockMask:
    """Select key blocks per (head, query-block row) from pooled probabilities.

    Per row: rank blocks by probability descending (ties broken by lower
    block index), take the shortest prefix covering tau cumulative mass,
    extend it to the rho floor, and never select fewer than one block.
    """
    s = as_f32(scores, "scores")
    if s.ndim != 3:
        raise ValueError(f"scores must be (heads, nq, nk), got {s.shape}")
    g = policy.geometry
    if s.shape[1] != g.nq_blocks or s.shape[2] != g.nk_blocks:
        raise ValueError(
            f"scores shape {s.shape[1:]} inconsistent with geometry "
            f"({g.nq_blocks}, {g.nk_blocks})"
        )
    nk = s.shape[2]
    k_floor = policy.min_blocks
    mask = np.empty(s.shape, dtype=bool)
    for h in range(s.shape[0]):
        # Stable sort on the negated row gives descending probability with
        # ascending-index tie-breaking.
        order = np.argsort(-s[h], axis=1, kind="stable")
        ranked = np.take_along_axis(s[h], order, axis=1)
        cum = np.cumsum(ranked.astype(np.float64), axis=1)
        # Shortest prefix with cum >= tau; if rounding keeps every prefix
        # below tau, the whole row is selected.
        cdf_len = np.minimum((cum < policy.tau).sum(axis=1) + 1, nk)
        take = np.maximum(cdf_len, k_floor)
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(nk)[None, :].repeat(s.shape[1], 0), axis=1)
        mask[h] = ranks < take[:, None]
    return BlockMask(mask, g)


def predict_mask(q_patches, k_patches, policy: MaskPolicy) -> BlockMask:
    """Pool patch-token queries/keys and select blocks in one step.

    Inputs are (heads, patch_tokens, head_dim) and must contain patch tokens
    only; special tokens are handled densely by the kernel and never enter
    the predictor.
    """
    q = as_f32(q_patches, "q_patches")
    k = as_f32(k_patches, "k_patches")
    g = policy.geometry
    if q.shape[1] != g.patch_tokens or k.shape[1] != g.patch_tokens:
        raise ValueError(
            f"expected {g.patch_tokens} patch tokens, got q={q.shape[1]}, k={k.shape[1]}"
        )
    qp = block_pool(q, g.block_q)
    kp = block_pool(k, g.block_k)
    scores = pooled_scores(qp, kp, q.shape[2])
    return select_blocks(scores, policy)


def write_mask(path, mask: BlockMask) -> None:
    """Write a block mask to ``path`` in .bsm format."""
    h, nq, nk = mask.blocks.shape
    with open(path, "wb") as f:
        f.write(struct.pack(_MASK_HEADER_FMT, MASK_MAGIC, h, nq, nk))
        rows = mask.blocks.reshape(h * nq, nk)
        f.write(np.packbits(rows, axis=1, bitorder="little").tobytes())


def read_mask(path, geometry: BlockGeometry) -> BlockMask:
    """Read a .bsm file and bind it to ``geometry`` (validating block counts)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _MASK_HEADER_SIZE:
        raise ValueError(f"mask file too short for header: {len(raw)} bytes")
    magic, h, nq, nk = struct.unpack_from(_MASK_HEADER_FMT, raw, 0)
    if magic != MASK_MAGIC:
        raise ValueError(f"bad mask magic {magic!r}, expected {MASK_MAGIC!r}")
    if min(h, nq, nk) < 1:
        raise ValueError(f"invalid mask header dims ({h}, {nq}, {nk})")
    row_bytes = -(-nk // 8)
    expected = _MASK_HEADER_SIZE + h * nq * row_bytes
    if len(raw) != expected:
        raise ValueError(f"mask file size {len(raw)} != expected {expected}")
    packed = np.frombuffer(raw, dtype=np.uint8, offset=_MASK_HEADER_SIZE)
    bits = np.unpackbits(packed.reshape(h * nq, row_bytes), axis=1, bitorder="little")
    blocks = bits[:, :nk].astype(bool).reshape(h, nq, nk)
    return BlockMask(blocks, geometry)


def full_mask(geometry: BlockGeometry, heads: int) -> BlockMask:
    """All-selected mask (sparsity zero) for the given geometry."""
    return BlockMask(
        np.ones((heads, geometry.nq_blocks, geometry.nk_blocks), dtype=bool), geometry
    )
