"""Adaptive block-sparse global attention for multi-view transformers.

Training-free block mask prediction from pooled query/key similarity,
a special-token-aware block-sparse attention kernel with online softmax,
and an analysis/benchmark toolkit for attention sparsity.
"""

from .analysis import (
    Correspondence,
    DropMode,
    DropPolicy,
    QuadrantStats,
    drop_schedule,
    quadrant_stats,
    top_k_correspondences,
)
from .bench import BenchRow, bench_sweep, write_bench_csv
from .dense import AttentionInputs, dense_attention, dense_attention_map
from .layout import (
    BlockGeometry,
    TokenLayout,
    attention_entry_count,
    geometry_for,
    partition_permutation,
    patch_token_indices,
    special_token_indices,
    token_coords,
    token_index,
)
from .maskpred import (
    BlockMask,
    MaskPolicy,
    block_pool,
    full_mask,
    pooled_scores,
    predict_mask,
    read_mask,
    select_blocks,
    write_mask,
)
from .sparse import (
    FlopEstimate,
    HeadReport,
    SparseAttentionJob,
    flop_estimate,
    sparse_attention,
    sparse_attention_stats,
)
from .synth import SynthResult, SynthScene, coherent_matches, full_shift_matches, synth_scene
from .tensorio import (
    BadMagicError,
    TensorFileError,
    TruncatedPayloadError,
    UnsupportedDTypeError,
    matmul,
    read_tensor,
    row_softmax,
    write_tensor,
)

__version__ = "0.1.0"
