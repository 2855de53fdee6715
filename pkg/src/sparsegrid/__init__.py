"""Block-sparse attention with head round-robin pattern discovery, on numpy."""

__version__ = "0.1.0"

from .attention import (
    BlockSelection,
    CostReport,
    HeadTensors,
    approximation_error,
    attention_probs,
    expand_block_mask,
    full_attention,
    sparse_attention,
    sparsity_of,
)
from .discovery import (
    DiscoveryConfig,
    ImportanceMap,
    anti_diagonal_importance,
    block_importance,
    discover,
    normalize_importance,
    sample_position,
    sample_positions_for_strategy,
    select_top_tau,
    static_protection,
    stride_importance,
)
from .numeric import (
    DegenerateRowError,
    ShapeError,
    frobenius_diff,
    masked_row_softmax,
    matmul_transposed,
)
from .oracle import (
    GroundTruth,
    SelectionReport,
    ground_truth_sets,
    predicted_key_set,
    score_selection,
)
from .workloads import WorkloadSpec, generate, load_tensors, save_tensors, self_check

__all__ = [
    "__version__",
    "BlockSelection",
    "CostReport",
    "HeadTensors",
    "approximation_error",
    "attention_probs",
    "expand_block_mask",
    "full_attention",
    "sparse_attention",
    "sparsity_of",
    "DiscoveryConfig",
    "ImportanceMap",
    "anti_diagonal_importance",
    "block_importance",
    "discover",
    "normalize_importance",
    "sample_position",
    "sample_positions_for_strategy",
    "select_top_tau",
    "static_protection",
    "stride_importance",
    "DegenerateRowError",
    "ShapeError",
    "frobenius_diff",
    "masked_row_softmax",
    "matmul_transposed",
    "GroundTruth",
    "SelectionReport",
    "ground_truth_sets",
    "predicted_key_set",
    "score_selection",
    "WorkloadSpec",
    "generate",
    "load_tensors",
    "save_tensors",
    "self_check",
]
