"""Synthetic correspondence scenes and mask-predictor recall on them."""

import numpy as np
import pytest

from bsattn.dense import dense_attention_map
from bsattn.layout import BlockGeometry, TokenLayout
from bsattn.maskpred import MaskPolicy, predict_mask
from bsattn.synth import (
    SynthScene,
    coherent_matches,
    full_shift_matches,
    synth_scene,
)


def aligned_run_matches(n_runs, run, patches, seed):
    """Planted runs aligned to run-sized boundaries in both frames,
    with one direction group per run."""
    rng = np.random.default_rng(seed)
    slots = patches // run
    starts_q = rng.choice(slots, size=n_runs, replace=False)
    starts_k = rng.choice(slots, size=n_runs, replace=False)
    out, groups = [], []
    for r, (a, b) in enumerate(zip(starts_q, starts_k)):
        out.extend((0, int(a) * run + t, 1, int(b) * run + t) for t in range(run))
        groups.extend([r] * run)
    return tuple(out), tuple(groups)


def scene_recall(scene, seed, tau, rho, block_q=64, block_k=32):
    res = synth_scene(scene, seed)
    geometry = BlockGeometry(scene.layout.patch_tokens, block_q, block_k)
    policy = MaskPolicy(tau=tau, rho=rho, geometry=geometry)
    mask = predict_mask(res.inputs.q, res.inputs.k, policy)
    truth = res.relevant_blocks(geometry)
    hit = sum(bool(mask.blocks[0, qb, kb]) for qb, kb in truth)
    return hit / len(truth), res


class TestSceneGeneration:
    def test_same_seed_identical(self):
        scene = SynthScene(frames=2, patches_per_frame=32, head_dim=8,
                           matches=((0, 1, 1, 5),), c=4.0)
        a = synth_scene(scene, seed=7)
        b = synth_scene(scene, seed=7)
        assert a.inputs.q.tobytes() == b.inputs.q.tobytes()
        assert a.inputs.k.tobytes() == b.inputs.k.tobytes()
        assert a.inputs.v.tobytes() == b.inputs.v.tobytes()
        c = synth_scene(scene, seed=8)
        assert a.inputs.q.tobytes() != c.inputs.q.tobytes()

    def test_duplicate_query_in_pair_rejected(self):
        with pytest.raises(ValueError, match="reuses"):
            SynthScene(frames=2, patches_per_frame=8, head_dim=4,
                       matches=((0, 1, 1, 2), (0, 1, 1, 3)), c=1.0)

    def test_duplicate_key_in_pair_rejected(self):
        with pytest.raises(ValueError, match="reuses"):
            SynthScene(frames=2, patches_per_frame=8, head_dim=4,
                       matches=((0, 1, 1, 2), (0, 3, 1, 2)), c=1.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            SynthScene(frames=2, patches_per_frame=8, head_dim=4,
                       matches=((0, 9, 1, 2),), c=1.0)

    def test_planted_pair_token_indices(self):
        scene = SynthScene(frames=2, patches_per_frame=4, head_dim=4,
                           matches=((0, 2, 1, 3),), c=1.0, specials_per_frame=1)
        res = synth_scene(scene, seed=0)
        # frame layout: s p p p p | s p p p p -> query 0+1+2, key 5+1+3
        assert res.planted_token_pairs() == [(3, 9)]

    def test_relevant_blocks(self):
        scene = SynthScene(frames=2, patches_per_frame=64, head_dim=4,
                           matches=((0, 10, 1, 40), (1, 5, 0, 63)), c=1.0)
        g = BlockGeometry(128, block_q=32, block_k=16)
        # patch-order indices: q=10 -> block 0, k=64+40=104 -> block 6;
        # q=64+5=69 -> block 2, k=63 -> block 3
        assert scene_blocks(scene, g) == {(0, 6), (2, 3)}


def scene_blocks(scene, geometry):
    res = synth_scene(scene, seed=0)
    return res.relevant_blocks(geometry)


class TestMatchGenerators:
    def test_coherent_matches_valid_and_sized(self):
        matches, groups = coherent_matches(3, 100, 64, seed=1, run_length=16)
        assert len(matches) == 64
        assert len(groups) == 64
        assert len(set(groups)) == 4  # four runs of sixteen
        SynthScene(frames=3, patches_per_frame=100, head_dim=4,
                   matches=matches, c=1.0,
                   direction_groups=groups)  # validates the injection property

    def test_full_shift_matches_cover_every_token(self):
        matches, groups = full_shift_matches(3, 50, seed=2, group_length=25)
        assert len(matches) == 3 * 50
        scene = SynthScene(frames=3, patches_per_frame=50, head_dim=4,
                           matches=matches, c=1.0, direction_groups=groups)
        queries = {(fa, i) for fa, i, _, _ in scene.matches}
        assert len(queries) == 150


class TestPredictorRecall:
    def test_strong_signal_recovers_blocks(self):
        """With c well above the noise floor, at least 95% of ground-truth
        blocks survive selection at tau=0.9, rho=0.5 (averaged over seeds)."""
        recalls = []
        for seed in range(20):
            matches, groups = aligned_run_matches(4, 32, 256, seed=seed)
            scene = SynthScene(frames=2, patches_per_frame=256, head_dim=16,
                               matches=matches, c=12.0, direction_groups=groups)
            recall, _ = scene_recall(scene, seed=100 + seed, tau=0.9, rho=0.5,
                                     block_q=64, block_k=32)
            recalls.append(recall)
        assert np.mean(recalls) >= 0.95

    def test_zero_signal_recall_is_chance(self):
        """c=0 leaves attention statistically uniform, so at 50% sparsity
        (tau=0, rho=0.5 keeps exactly half the blocks) ground-truth recall
        sits at the 50% chance line."""
        recalls = []
        for seed in range(20):
            matches, groups = aligned_run_matches(4, 32, 256, seed=seed)
            scene = SynthScene(frames=2, patches_per_frame=256, head_dim=16,
                               matches=matches, c=0.0, direction_groups=groups)
            recall, _ = scene_recall(scene, seed=300 + seed, tau=0.0, rho=0.5,
                                     block_q=64, block_k=32)
            recalls.append(recall)
        assert 0.38 <= np.mean(recalls) <= 0.62

    def test_zero_signal_mass_is_uniform(self):
        masses = []
        for seed in range(20):
            scene = SynthScene(frames=2, patches_per_frame=64, head_dim=16,
                               matches=tuple((0, i, 1, (i + 9) % 64) for i in range(16)),
                               c=0.0)
            res = synth_scene(scene, seed=500 + seed)
            m = dense_attention_map(res.inputs)[0]
            masses.extend(m[q, k] for q, k in res.planted_token_pairs())
        n = 128
        assert abs(np.mean(masses) * n - 1.0) < 0.5

    def test_strong_signal_mass_concentrates(self):
        scene = SynthScene(frames=2, patches_per_frame=64, head_dim=16,
                           matches=tuple((0, i, 1, (i + 9) % 64) for i in range(16)),
                           c=12.0)
        res = synth_scene(scene, seed=9)
        m = dense_attention_map(res.inputs)[0]
        masses = [m[q, k] for q, k in res.planted_token_pairs()]
        assert np.mean(masses) > 0.9

    def test_recall_non_decreasing_in_tau(self):
        matches, groups = aligned_run_matches(4, 32, 256, seed=11)
        scene = SynthScene(frames=2, patches_per_frame=256, head_dim=16,
                           matches=matches, c=6.0, direction_groups=groups)
        recalls = [
            scene_recall(scene, seed=12, tau=tau, rho=0.5, block_q=64, block_k=32)[0]
            for tau in (0.1, 0.5, 0.9)
        ]
        assert recalls == sorted(recalls)
