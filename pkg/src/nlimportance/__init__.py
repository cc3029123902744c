"""Importance sampling for nonlinear models through adjoint operators."""

__version__ = "0.1.0"

from .activations import ActivationSpec, identity, logistic, relu, swish_type  # noqa: E402
from .dual_matrix import Dataset, DualMatrix, build_dual_matrix  # noqa: E402
from .models import make_family  # noqa: E402
from .optimizer import ConstraintSet, train_full, train_subsampled  # noqa: E402
from .sampler import SampleSizeSpec, draw, embedding_check, sample_size, subsampled_loss  # noqa: E402
from .scores import leverage_scores, linear_surrogate_scores, norm_scores, uniform_scores  # noqa: E402

__all__ = [
    "ActivationSpec",
    "identity",
    "logistic",
    "relu",
    "swish_type",
    "Dataset",
    "DualMatrix",
    "build_dual_matrix",
    "make_family",
    "ConstraintSet",
    "train_full",
    "train_subsampled",
    "SampleSizeSpec",
    "draw",
    "embedding_check",
    "sample_size",
    "subsampled_loss",
    "leverage_scores",
    "linear_surrogate_scores",
    "norm_scores",
    "uniform_scores",
]
