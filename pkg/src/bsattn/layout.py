"""Multi-frame token sequence bookkeeping.

A sequence holds F frames, each contributing S special tokens (camera /
register style embeddings) and P patch tokens. The source order within a
frame is specials first, then patches; ``specials_first=False`` declares
dumps that use the opposite convention. All indices here refer to that
interleaved source order unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPECIAL = "special"
PATCH = "patch"


def _infer_grid(patches: int) -> tuple[int, int]:
    r = int(np.sqrt(patches))
    while r > 1 and patches % r:
        r -= 1
    return (r, patches // r)


@dataclass(frozen=True)
class TokenLayout:
    """Token bookkeeping for F frames of S specials + P patches each."""

    frames: int
    patches_per_frame: int
    specials_per_frame: int = 5
    patch_grid: tuple[int, int] | None = None
    specials_first: bool = True

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if self.patches_per_frame < 1:
            raise ValueError(f"patches_per_frame must be >= 1, got {self.patches_per_frame}")
        if self.specials_per_frame < 0:
            raise ValueError(f"specials_per_frame must be >= 0, got {self.specials_per_frame}")
        if self.patch_grid is None:
            object.__setattr__(self, "patch_grid", _infer_grid(self.patches_per_frame))
        rows, cols = self.patch_grid
        if rows * cols != self.patches_per_frame:
            raise ValueError(
                f"patch_grid {self.patch_grid} does not cover {self.patches_per_frame} patches"
            )

    @property
    def tokens_per_frame(self) -> int:
        return self.patches_per_frame + self.specials_per_frame

    @property
    def total_tokens(self) -> int:
        return self.frames * self.tokens_per_frame

    @property
    def patch_tokens(self) -> int:
        return self.frames * self.patches_per_frame

    @property
    def special_tokens(self) -> int:
        return self.frames * self.specials_per_frame


@dataclass(frozen=True)
class BlockGeometry:
    """Block tiling of the patch-token subsequence.

    The trailing query/key block may be ragged (shorter than block_q/block_k).
    """

    patch_tokens: int
    block_q: int = 128
    block_k: int = 64

    def __post_init__(self):
        if self.patch_tokens < 1:
            raise ValueError(f"patch_tokens must be >= 1, got {self.patch_tokens}")
        if self.block_q < 1 or self.block_k < 1:
            raise ValueError(f"block sizes must be >= 1, got {self.block_q}/{self.block_k}")

    @property
    def nq_blocks(self) -> int:
        return -(-self.patch_tokens // self.block_q)

    @property
    def nk_blocks(self) -> int:
        return -(-self.patch_tokens // self.block_k)

    def q_block_sizes(self) -> np.ndarray:
        """Token count of each query block, including the ragged tail."""
        return _block_sizes(self.patch_tokens, self.block_q)

    def k_block_sizes(self) -> np.ndarray:
        return _block_sizes(self.patch_tokens, self.block_k)


def _block_sizes(n: int, block: int) -> np.ndarray:
    nb = -(-n // block)
    sizes = np.full(nb, block, dtype=np.int64)
    sizes[-1] = n - (nb - 1) * block
    return sizes


def geometry_for(layout: TokenLayout, block_q: int = 128, block_k: int = 64) -> BlockGeometry:
    return BlockGeometry(layout.patch_tokens, block_q, block_k)


def partition_permutation(layout: TokenLayout) -> tuple[np.ndarray, np.ndarray]:
    """Permutation from interleaved source order to [all specials | all patches].

    Returns (perm, inverse_perm) in gather convention: ``x[perm]`` reorders a
    source-order sequence into partitioned order, and ``y[inverse_perm]``
    undoes it. Both groups keep frame order, then within-frame order.
    """
    f, p, s = layout.frames, layout.patches_per_frame, layout.specials_per_frame
    per_frame = layout.tokens_per_frame
    base = np.arange(f, dtype=np.int64)[:, None] * per_frame
    if layout.specials_first:
        spec = (base + np.arange(s, dtype=np.int64)).ravel()
        patch = (base + s + np.arange(p, dtype=np.int64)).ravel()
    else:
        patch = (base + np.arange(p, dtype=np.int64)).ravel()
        spec = (base + p + np.arange(s, dtype=np.int64)).ravel()
    perm = np.concatenate([spec, patch])
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size, dtype=np.int64)
    return perm, inverse


def patch_token_indices(layout: TokenLayout) -> np.ndarray:
    """Source-order indices of all patch tokens, frame order preserved."""
    perm, _ = partition_permutation(layout)
    return perm[layout.special_tokens:]


def special_token_indices(layout: TokenLayout) -> np.ndarray:
    perm, _ = partition_permutation(layout)
    return perm[: layout.special_tokens]


def attention_entry_count(layout: TokenLayout, patch_only: bool = False) -> int:
    """Number of entries in the full (or patch-patch) attention matrix."""
    n = layout.patch_tokens if patch_only else layout.total_tokens
    return n * n


def token_coords(layout: TokenLayout, index: int) -> tuple[int, str, int, int]:
    """Decode a source-order token index to (frame, kind, grid row, grid col).

    Special tokens use the (-1, -1) grid convention.
    """
    n = layout.total_tokens
    if not 0 <= index < n:
        raise IndexError(f"token index {index} out of range [0, {n})")
    frame, local = divmod(index, layout.tokens_per_frame)
    s, p = layout.specials_per_frame, layout.patches_per_frame
    if layout.specials_first:
        if local < s:
            return (frame, SPECIAL, -1, -1)
        patch = local - s
    else:
        if local >= p:
            return (frame, SPECIAL, -1, -1)
        patch = local
    cols = layout.patch_grid[1]
    return (frame, PATCH, patch // cols, patch % cols)


def token_index(layout: TokenLayout, frame: int, kind: str, row: int = -1, col: int = -1) -> int:
    """Inverse of token_coords. Specials are addressed by (frame, row) with
    row = position of the special within its frame, or -1 for the first."""
    if not 0 <= frame < layout.frames:
        raise IndexError(f"frame {frame} out of range")
    s, p = layout.specials_per_frame, layout.patches_per_frame
    base = frame * layout.tokens_per_frame
    if kind == SPECIAL:
        slot = 0 if row < 0 else row
        if not 0 <= slot < s:
            raise IndexError(f"special slot {slot} out of range [0, {s})")
        return base + (slot if layout.specials_first else p + slot)
    if kind == PATCH:
        rows, cols = layout.patch_grid
        if not (0 <= row < rows and 0 <= col < cols):
            raise IndexError(f"patch coords ({row}, {col}) outside grid {layout.patch_grid}")
        patch = row * cols + col
        return base + (s + patch if layout.specials_first else patch)
    raise ValueError(f"unknown token kind {kind!r}")
