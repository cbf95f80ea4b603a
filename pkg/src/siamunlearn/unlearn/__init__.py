from .baselines import (
    baseline_amnesiac,
    baseline_finetune,
    baseline_neggrad,
    baseline_randlab,
    baseline_retrain,
)
from .losses import loss_kc, loss_kv, loss_sce, siamese_objective
from .permutation import PermutationSampler, keep_probability, permute_label, random_wrong_labels, transition_matrix
from .siamese import UnlearnConfig, siamese_unlearn

__all__ = [
    "PermutationSampler", "UnlearnConfig", "baseline_amnesiac", "baseline_finetune",
    "baseline_neggrad", "baseline_randlab", "baseline_retrain", "keep_probability",
    "loss_kc", "loss_kv", "loss_sce", "permute_label", "random_wrong_labels",
    "siamese_objective", "siamese_unlearn", "transition_matrix",
]
