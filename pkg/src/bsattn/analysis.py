"""Attention-map analysis: quadrant statistics, top-k correspondence
extraction, and layer-skip schedules.

Quadrants partition the N x N post-softmax map by the special/patch kind of
the query and key token: S2S, S2P, P2S, P2P (query kind first). Statistics
are computed on materialized maps, so callers are expected to work at
reduced resolution; the map producer enforces a size cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .layout import PATCH, TokenLayout, token_coords, special_token_indices
from .tensorio import as_f32

QUADRANTS = ("S2S", "S2P", "P2S", "P2P")


@dataclass(frozen=True)
class QuadrantStats:
    """Per-head mean/max attention per quadrant, plus across-head aggregates.

    ``means`` and ``maxes`` map quadrant name to a (heads,) array. Quadrants
    that are empty for the given layout (e.g. S2S with no special tokens)
    are absent from the dicts.
    """

    means: dict[str, np.ndarray]
    maxes: dict[str, np.ndarray]
    heads: int

    def aggregate(self) -> dict[str, tuple[float, float, float, float]]:
        """Per quadrant: (mean of means, std of means, mean of maxes, std of maxes)."""
        out = {}
        for quad in self.means:
            mn, mx = self.means[quad], self.maxes[quad]
            out[quad] = (
                float(mn.mean()), float(mn.std()), float(mx.mean()), float(mx.std())
            )
        return out


def quadrant_stats(attn_map, layout: TokenLayout, row_sum_tol: float = 1e-5) -> QuadrantStats:
    """Reduce a (heads, N, N) post-softmax map into per-quadrant statistics."""
    a = as_f32(attn_map, "attn_map")
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError(f"attn_map must be (heads, N, N), got {a.shape}")
    n = layout.total_tokens
    if a.shape[1] != n:
        raise ValueError(f"map covers {a.shape[1]} tokens, layout describes {n}")
    sums = a.sum(axis=2, dtype=np.float64)
    if np.abs(sums - 1.0).max() > row_sum_tol:
        raise ValueError("rows do not sum to 1; expected a post-softmax map")
    is_special = np.zeros(n, dtype=bool)
    is_special[special_token_indices(layout)] = True
    groups = {
        "S2S": (is_special, is_special),
        "S2P": (is_special, ~is_special),
        "P2S": (~is_special, is_special),
        "P2P": (~is_special, ~is_special),
    }
    means: dict[str, np.ndarray] = {}
    maxes: dict[str, np.ndarray] = {}
    for quad, (qsel, ksel) in groups.items():
        if not qsel.any() or not ksel.any():
            continue
        sub = a[:, qsel][:, :, ksel]
        means[quad] = sub.mean(axis=(1, 2), dtype=np.float64)
        maxes[quad] = sub.max(axis=(1, 2)).astype(np.float64)
    return QuadrantStats(means=means, maxes=maxes, heads=a.shape[0])


@dataclass(frozen=True)
class Correspondence:
    q_frame: int
    q_row: int
    q_col: int
    k_frame: int
    k_row: int
    k_col: int
    weight: float


def top_k_correspondences(
    attn_map, layout: TokenLayout, k: int, cross_view_only: bool = False
) -> list[Correspondence]:
    """The k largest patch-patch entries of a post-softmax map, decoded to
    patch-grid coordinates.

    Accepts a (N, N) map or a (heads, N, N) stack, which is averaged over
    heads first. With ``cross_view_only`` only entries whose query and key
    come from different frames are candidates. Results are sorted by
    descending weight, ties by (query index, key index); if fewer than k
    candidates exist, all are returned.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    a = as_f32(attn_map, "attn_map")
    if a.ndim == 3:
        a = a.mean(axis=0)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"attn_map must be square, got {a.shape}")
    n = layout.total_tokens
    if a.shape[0] != n:
        raise ValueError(f"map covers {a.shape[0]} tokens, layout describes {n}")
    coords = [token_coords(layout, i) for i in range(n)]
    patch_idx = np.array([i for i, c in enumerate(coords) if c[1] == PATCH], dtype=np.int64)
    sub = a[np.ix_(patch_idx, patch_idx)]
    if cross_view_only:
        frames = np.array([coords[i][0] for i in patch_idx])
        valid = frames[:, None] != frames[None, :]
        sub = np.where(valid, sub, -np.inf)  # sentinel sorts after any weight
    else:
        valid = np.ones_like(sub, dtype=bool)
    flat = sub.ravel()
    # Stable sort on the negated weights: ties fall back to flat order,
    # which is (query index, key index) lexicographic.
    order = np.argsort(-flat, kind="stable")
    out = []
    np_ = patch_idx.size
    for pos in order:
        qi, ki = divmod(int(pos), np_)
        if not valid[qi, ki]:
            break  # sentinel region reached; no candidates left
        qf, _, qr, qc = coords[patch_idx[qi]]
        kf, _, kr, kc = coords[patch_idx[ki]]
        out.append(Correspondence(qf, qr, qc, kf, kr, kc, float(flat[pos])))
        if len(out) == k:
            break
    return out


class DropMode(str, Enum):
    FRONT = "front"
    BACK = "back"
    FRONT_AND_BACK = "front-and-back"
    MID = "mid"


@dataclass(frozen=True)
class DropPolicy:
    """Which global-attention layers to skip at inference time."""

    mode: DropMode
    n_skipped: int
    layers: int

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layers must be >= 1, got {self.layers}")
        if not 0 <= self.n_skipped <= self.layers:
            raise ValueError(
                f"n_skipped must be in [0, {self.layers}], got {self.n_skipped}"
            )


def drop_schedule(policy: DropPolicy) -> set[int]:
    """Deterministic set of layer indices to skip.

    front: the first n layers. back: the last n. front-and-back: alternate
    front, back, front, ... mid: a contiguous centered run starting at
    floor((L - n) / 2).
    """
    n, total = policy.n_skipped, policy.layers
    if policy.mode is DropMode.FRONT:
        return set(range(n))
    if policy.mode is DropMode.BACK:
        return set(range(total - n, total))
    if policy.mode is DropMode.MID:
        start = (total - n) // 2
        return set(range(start, start + n))
    picks: set[int] = set()
    front, back = 0, total - 1
    for i in range(n):
        if i % 2 == 0:
            picks.add(front)
            front += 1
        else:
            picks.add(back)
            back -= 1
    return picks
