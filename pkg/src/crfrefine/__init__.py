"""Dense-CRF refinement of coarse segmentation score maps."""
from .core import (
    VOID_LABEL,
    argmax_channels,
    load_image,
    load_labels,
    load_tensor,
    neg_log,
    save_image,
    save_labels,
    save_tensor,
    softmax_channels,
)
from .densecrf import InferenceConfig, KernelParams, energy, inference, mean_field_step, unary_from_scores
from .filtering import Permutohedral, gaussian_filter_exact, permutohedral_filter

__version__ = "0.1.0"
