"""rankforge: a desk-scale learning-to-rank toolkit.

Six training objectives (bce, hinge, infonce, margin_mse,
distill_ranknet, adr_mse) with hand-derived gradients, parametric
stand-in scorers, AdamW training with per-document batch normalization,
TREC-style evaluation metrics, and Friedman/Nemenyi cross-method
comparison.
"""

from .core import (
    DistillTriplet,
    InvalidConfigError,
    InvalidInputError,
    JudgedPool,
    LossConfig,
    LossOutput,
    RankforgeError,
    RankMatrix,
    ScoredList,
    TeacherRanking,
    labels_from_grades,
)
from .losses import (
    OBJECTIVES,
    TrainingBatch,
    adr_mse,
    bce_pair,
    distill_ranknet,
    hinge_pair,
    info_nce,
    loss_by_name,
    margin_mse,
    soft_rank,
)

__version__ = "0.1.0"

__all__ = [
    "DistillTriplet",
    "InvalidConfigError",
    "InvalidInputError",
    "JudgedPool",
    "LossConfig",
    "LossOutput",
    "OBJECTIVES",
    "RankMatrix",
    "RankforgeError",
    "ScoredList",
    "TeacherRanking",
    "TrainingBatch",
    "adr_mse",
    "bce_pair",
    "distill_ranknet",
    "hinge_pair",
    "info_nce",
    "labels_from_grades",
    "loss_by_name",
    "margin_mse",
    "soft_rank",
    "__version__",
]
