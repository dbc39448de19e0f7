"""Synthetic multi-view scenes with planted cross-frame matches.

Queries and keys are unit-scale Gaussian noise; each planted match (i, j)
adds c * u to query row i and key row j for a per-match random unit
direction u, so attention concentrates on the matched pairs once c
dominates the noise. The generator knows exactly which patch-patch blocks
carry planted mass, which makes it a ground-truth harness for the mask
predictor and for accuracy-vs-sparsity measurements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense import AttentionInputs
from .layout import PATCH, BlockGeometry, TokenLayout, token_index


@dataclass(frozen=True)
class SynthScene:
    """Scene description: geometry, planted matches, signal scale c.

    ``matches`` is a list of (frame_a, token_i, frame_b, token_j) tuples,
    a partial injection per ordered frame pair: no query token and no key
    token appears twice within the same pair.

    ``direction_groups`` optionally labels each match; matches sharing a
    label share their planted direction, modelling an extended geometric
    feature visible in both views. Without labels every match gets an
    independent direction, which leaves per-token attention diffuse: lone
    random directions cannot outweigh an N-key noise tail at moderate c.
    """

    frames: int
    patches_per_frame: int
    head_dim: int
    matches: tuple[tuple[int, int, int, int], ...]
    c: float
    heads: int = 1
    specials_per_frame: int = 0
    direction_groups: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "matches", tuple(tuple(m) for m in self.matches))
        if self.direction_groups is not None:
            object.__setattr__(self, "direction_groups", tuple(self.direction_groups))
            if len(self.direction_groups) != len(self.matches):
                raise ValueError(
                    f"{len(self.direction_groups)} direction groups for "
                    f"{len(self.matches)} matches"
                )
        seen_q: set[tuple[int, int, int]] = set()
        seen_k: set[tuple[int, int, int]] = set()
        for fa, i, fb, j in self.matches:
            for f, t in ((fa, i), (fb, j)):
                if not 0 <= f < self.frames:
                    raise ValueError(f"match frame {f} out of range")
                if not 0 <= t < self.patches_per_frame:
                    raise ValueError(f"match token {t} out of range")
            if (fa, fb, i) in seen_q or (fa, fb, j) in seen_k:
                raise ValueError(
                    f"match ({fa},{i})->({fb},{j}) reuses a token within frame pair"
                )
            seen_q.add((fa, fb, i))
            seen_k.add((fa, fb, j))

    @property
    def layout(self) -> TokenLayout:
        return TokenLayout(
            frames=self.frames,
            patches_per_frame=self.patches_per_frame,
            specials_per_frame=self.specials_per_frame,
        )


@dataclass(frozen=True)
class SynthResult:
    scene: SynthScene
    inputs: AttentionInputs

    def planted_token_pairs(self) -> list[tuple[int, int]]:
        """Planted (query, key) pairs as source-order token indices."""
        layout = self.scene.layout
        out = []
        for fa, i, fb, j in self.scene.matches:
            gi = self.scene.layout.patch_grid[1]
            out.append((
                token_index(layout, fa, PATCH, i // gi, i % gi),
                token_index(layout, fb, PATCH, j // gi, j % gi),
            ))
        return out

    def relevant_blocks(self, geometry: BlockGeometry) -> set[tuple[int, int]]:
        """Patch-patch (query block, key block) pairs containing any match."""
        p = self.scene.patches_per_frame
        out = set()
        for fa, i, fb, j in self.scene.matches:
            qi = fa * p + i
            ki = fb * p + j
            out.add((qi // geometry.block_q, ki // geometry.block_k))
        return out


def coherent_matches(
    frames: int,
    patches_per_frame: int,
    n_matches: int,
    seed: int,
    run_length: int = 32,
) -> tuple[tuple[tuple[int, int, int, int], ...], tuple[int, ...]]:
    """Generate block-coherent matches: contiguous runs of query tokens
    matched to equally contiguous, shifted runs in another frame.

    Contiguity mimics real cross-view correspondences, where neighboring
    patches match neighboring patches; scattering single matches across
    blocks would give the block predictor nothing to see. Returns the
    matches together with per-run direction group labels.
    """
    if frames < 2:
        raise ValueError("coherent matches need at least two frames")
    rng = np.random.default_rng(seed)
    matches: list[tuple[int, int, int, int]] = []
    groups: list[int] = []
    used: set[tuple[int, int, int]] = set()
    run_id = 0
    guard = 0
    while len(matches) < n_matches and guard < 1000:
        guard += 1
        fa = int(rng.integers(frames))
        fb = int(rng.integers(frames - 1))
        fb = fb + 1 if fb >= fa else fb
        run = min(run_length, n_matches - len(matches), patches_per_frame)
        i0 = int(rng.integers(patches_per_frame - run + 1))
        j0 = int(rng.integers(patches_per_frame - run + 1))
        span = [(fa, i0 + t, fb, j0 + t) for t in range(run)]
        if any((a, b, i) in used or (a + frames, b, j) in used for a, i, b, j in span):
            continue
        for a, i, b, j in span:
            used.add((a, b, i))
            used.add((a + frames, b, j))
        matches.extend(span)
        groups.extend([run_id] * run)
        run_id += 1
    return tuple(matches), tuple(groups)


def full_shift_matches(
    frames: int,
    patches_per_frame: int,
    seed: int,
    group_length: int = 64,
    shift_quantum: int = 1,
) -> tuple[tuple[tuple[int, int, int, int], ...], tuple[int, ...]]:
    """Match every token of frame f to a cyclically shifted token of
    frame (f+1) mod frames: one full injection per consecutive frame pair.

    Direction groups cover ``group_length`` consecutive matches each.
    ``shift_quantum`` rounds each frame pair's shift to a multiple, which
    bounds how unevenly a group's keys can straddle block boundaries.
    """
    rng = np.random.default_rng(seed)
    matches = []
    groups = []
    run_id = 0
    for f in range(frames):
        g = (f + 1) % frames
        if g == f:
            continue
        shift = int(rng.integers(patches_per_frame // shift_quantum)) * shift_quantum
        for i in range(patches_per_frame):
            matches.append((f, i, g, (i + shift) % patches_per_frame))
            groups.append(run_id + i // group_length)
        run_id = groups[-1] + 1
    return tuple(matches), tuple(groups)


def synth_scene(scene: SynthScene, seed: int) -> SynthResult:
    """Materialize Q/K/V for a scene. Reproducible: same seed, same tensors."""
    rng = np.random.default_rng(seed)
    layout = scene.layout
    h, n, d = scene.heads, layout.total_tokens, scene.head_dim
    q = rng.standard_normal((h, n, d)).astype(np.float32)
    k = rng.standard_normal((h, n, d)).astype(np.float32)
    v = rng.standard_normal((h, n, d)).astype(np.float32)
    per_frame = layout.tokens_per_frame
    s = layout.specials_per_frame
    c = np.float32(scene.c)
    directions: dict[int, np.ndarray] = {}
    for m, (fa, i, fb, j) in enumerate(scene.matches):
        group = scene.direction_groups[m] if scene.direction_groups is not None else m
        u = directions.get(group)
        if u is None:
            u = rng.standard_normal(d).astype(np.float32)
            u /= np.float32(np.linalg.norm(u))
            directions[group] = u
        qi = fa * per_frame + s + i
        kj = fb * per_frame + s + j
        q[:, qi] += c * u
        k[:, kj] += c * u
    return SynthResult(scene=scene, inputs=AttentionInputs(q, k, v))
