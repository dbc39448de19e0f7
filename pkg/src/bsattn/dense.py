"""Reference multi-head scaled dot-product attention.

This is the exact baseline the block-sparse kernel is validated against:
per head, ``softmax(Q K^T / sqrt(d_h)) V`` with subtract-max stabilization.
Outputs are computed in query-row chunks so no N x N buffer is ever live;
materializing full attention maps is a separate, size-guarded operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorio import as_f32

DEFAULT_MAP_ELEMENT_CAP = 2**31


@dataclass(frozen=True)
class AttentionInputs:
    """Per-head query/key/value tensors of shape (heads, tokens, head_dim)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = as_f32(self.q, "q")
        k = as_f32(self.k, "k")
        v = as_f32(self.v, "v")
        for name, t in (("q", q), ("k", k), ("v", v)):
            if t.ndim != 3:
                raise ValueError(f"{name} must be (heads, tokens, head_dim), got {t.shape}")
        if not (q.shape == k.shape == v.shape):
            raise ValueError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def heads(self) -> int:
        return self.q.shape[0]

    @property
    def tokens(self) -> int:
        return self.q.shape[1]

    @property
    def head_dim(self) -> int:
        return self.q.shape[2]

    @property
    def scale(self) -> float:
        return 1.0 / float(np.sqrt(self.head_dim))


def _attend_rows(q_rows: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    # Exact softmax over the full key range for a chunk of query rows.
    logits = (q_rows @ k.T) * np.float32(scale)
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits @ v


def dense_attention(inp: AttentionInputs, row_chunk: int = 256) -> np.ndarray:
    """Exact multi-head attention, streamed over query-row chunks."""
    h, n, d = inp.q.shape
    out = np.empty((h, n, d), dtype=np.float32)
    for head in range(h):
        k, v = inp.k[head], inp.v[head]
        for start in range(0, n, row_chunk):
            stop = min(start + row_chunk, n)
            out[head, start:stop] = _attend_rows(inp.q[head, start:stop], k, v, inp.scale)
    return out


def dense_attention_map(
    inp: AttentionInputs, max_elements: int = DEFAULT_MAP_ELEMENT_CAP
) -> np.ndarray:
    """Full post-softmax attention probabilities, shape (heads, N, N).

    Refuses, before allocating anything, when heads * N * N exceeds
    ``max_elements``; quadratic maps at production sequence lengths do not
    fit in memory and the streaming kernel is the scalable path.
    """
    h, n, _ = inp.q.shape
    total = h * n * n
    if total > max_elements:
        raise ValueError(
            f"attention map of {total} elements exceeds cap {max_elements}; "
            "raise max_elements only if you have the memory for it"
        )
    maps = np.empty((h, n, n), dtype=np.float32)
    for head in range(h):
        logits = (inp.q[head] @ inp.k[head].T) * np.float32(inp.scale)
        logits -= logits.max(axis=1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=1, keepdims=True)
        maps[head] = logits
    return maps
