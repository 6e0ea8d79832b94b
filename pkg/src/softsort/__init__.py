"""Relaxed argsort operators (SoftSort and NeuralSort) with analytic gradients."""

from .core import (
    L1,
    L2,
    InvalidInputError,
    SemiMetric,
    argsort_desc,
    hard_project,
    neural_sort,
    neural_sort_batch,
    neural_sort_logits,
    perm_matrix,
    row_softmax,
    soft_sort,
    soft_sort_batch,
    sort_desc,
    urs_violations,
)
from .gradients import (
    IllDefinedGradientError,
    gradcheck,
    neural_sort_vjp,
    neural_sort_with_vjp,
    soft_sort_vjp,
    soft_sort_with_vjp,
)
from .stochastic import sample_gumbel, stochastic_relaxed_sort

__version__ = "0.1.0"

__all__ = [
    "L1", "L2", "InvalidInputError", "SemiMetric", "argsort_desc", "hard_project",
    "neural_sort", "neural_sort_batch", "neural_sort_logits", "perm_matrix", "row_softmax",
    "soft_sort", "soft_sort_batch", "sort_desc", "urs_violations",
    "IllDefinedGradientError", "gradcheck", "neural_sort_vjp", "neural_sort_with_vjp",
    "soft_sort_vjp", "soft_sort_with_vjp",
    "sample_gumbel", "stochastic_relaxed_sort",
]
