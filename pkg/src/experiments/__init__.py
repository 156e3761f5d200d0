"""Experiment grids built from the training and adaptation stages"""

from .ablation import AXES, AblationResult, AblationRow, AblationVariant, ablation_variants, run_ablation

__all__ = [
    "AXES",
    "AblationResult",
    "AblationRow",
    "AblationVariant",
    "ablation_variants",
    "run_ablation",
]
