from .masks import (
    MaskPattern,
    MaskSpec,
    VisibleTokens,
    apply_mask,
    gather_visible,
    sample_blockwise_mask,
    sample_mask,
    sample_tube_mask,
    scatter_visible,
    stack_visibility,
    tube_keep_index,
    visible_index,
)

__all__ = [
    "MaskPattern",
    "MaskSpec",
    "VisibleTokens",
    "apply_mask",
    "gather_visible",
    "sample_blockwise_mask",
    "sample_mask",
    "sample_tube_mask",
    "scatter_visible",
    "stack_visibility",
    "tube_keep_index",
    "visible_index",
]
