"""Fully-connected CRF with Potts pairwise terms and Gaussian edge kernels.

The pairwise weight between pixels i and j is

    w1 * exp(-|p_i - p_j|^2 / (2 sa^2) - |I_i - I_j|^2 / (2 sb^2))
  + w2 * exp(-|p_i - p_j|^2 / (2 sg^2))

and inference is parallel mean-field, where each message pass is a
Gaussian filtering of the current marginals.
"""
from dataclasses import dataclass, field

import numpy as np

from .core import VOID_LABEL, argmax_channels, as_image, as_tensor3, check_labels, neg_log, softmax_channels
from .filtering import (
    NORMALIZE_MODES,
    NORMALIZE_SYMMETRIC,
    ExactFilter,
    Permutohedral,
    bilateral_features,
    spatial_features,
)

METHODS = ("permutohedral", "exact")


@dataclass(frozen=True)
class KernelParams:
    w1: float = 10.0
    w2: float = 3.0
    sigma_alpha: float = 80.0
    sigma_beta: float = 13.0
    sigma_gamma: float = 3.0

    def __post_init__(self):
        if min(self.sigma_alpha, self.sigma_beta, self.sigma_gamma) <= 0:
            raise ValueError(f"kernel bandwidths must be positive: {self}")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError(f"kernel weights must be non-negative: {self}")

    def as_dict(self):
        return {
            "w1": self.w1,
            "w2": self.w2,
            "sigma_alpha": self.sigma_alpha,
            "sigma_beta": self.sigma_beta,
            "sigma_gamma": self.sigma_gamma,
        }


@dataclass(frozen=True)
class InferenceConfig:
    iterations: int = 10
    normalize: str = NORMALIZE_SYMMETRIC
    record_trajectory: bool = False
    method: str = "permutohedral"

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.normalize not in NORMALIZE_MODES:
            raise ValueError(f"normalize must be one of {NORMALIZE_MODES}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class InferenceResult:
    q: np.ndarray
    labels: np.ndarray
    trajectory: list = field(default_factory=list)

    def log_trajectory(self, floor=1e-8):
        """The recorded marginals on log scale, one (H, W, L) array per iteration."""
        return [-neg_log(q, floor) for q in self.trajectory]


def unary_from_scores(scores):
    """theta = -log softmax(scores)."""
    return neg_log(softmax_channels(scores))


@dataclass
class PairwiseFilters:
    """Gaussian filters of the two pairwise kernels for one image.

    Building them is the expensive, parameter-dependent part of inference,
    so callers that sweep only the weights can reuse one instance.
    """

    bilateral: object
    spatial: object

    @classmethod
    def build(cls, image, params, method="permutohedral"):
        img = as_image(image)
        h, w = img.shape[:2]
        make = Permutohedral if method == "permutohedral" else ExactFilter
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        return cls(
            make(bilateral_features(img, params.sigma_alpha, params.sigma_beta)),
            make(spatial_features(h, w, params.sigma_gamma)),
        )


def _message(filt, q, weight, normalize):
    # kernel response with the j == i term removed
    out = filt.filter(q)
    out -= q
    scale = np.float32(weight)
    if normalize == NORMALIZE_SYMMETRIC:
        out *= (scale / filt.ones_response())[:, None]
    else:
        out *= scale
    return out


def _update(q, unary, filters, params, normalize):
    """One parallel mean-field update on flat (n, L) arrays."""
    msg = np.zeros(unary.shape, dtype=np.float32)
    if params.w1 > 0:
        msg += _message(filters.bilateral, q, params.w1, normalize)
    if params.w2 > 0:
        msg += _message(filters.spatial, q, params.w2, normalize)
    # Potts: sum over l' != l of msg(l') = total - msg(l)
    logits = msg
    logits -= msg.sum(axis=1, keepdims=True)
    logits -= unary
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits


def _shapes(q, unary, image):
    u = as_tensor3(unary, "unary")
    img = as_image(image)
    if u.shape[:2] != img.shape[:2]:
        raise ValueError(f"unary {u.shape[:2]} and image {img.shape[:2]} differ in size")
    if q is not None and np.shape(q) != u.shape:
        raise ValueError(f"Q {np.shape(q)} and unary {u.shape} differ in shape")
    return u, img


def mean_field_step(q, unary, image, params, normalize=NORMALIZE_SYMMETRIC, method="permutohedral", filters=None):
    """Apply one simultaneous mean-field update to the marginals ``q``."""
    u, img = _shapes(q, unary, image)
    h, w, n_labels = u.shape
    if filters is None:
        filters = PairwiseFilters.build(img, params, method)
    q_flat = np.asarray(q, dtype=np.float32).reshape(-1, n_labels)
    out = _update(q_flat, u.reshape(-1, n_labels), filters, params, normalize)
    return out.reshape(h, w, n_labels)


def mean_field(unary, q0, filters, params, iterations, normalize=NORMALIZE_SYMMETRIC, record=False):
    """Run ``iterations`` updates from ``q0``; returns (q, trajectory)."""
    h, w, n_labels = unary.shape
    u = unary.reshape(-1, n_labels)
    q = np.asarray(q0, dtype=np.float32).reshape(-1, n_labels)
    trajectory = []
    for _ in range(iterations):
        q = _update(q, u, filters, params, normalize)
        if record:
            trajectory.append(q.reshape(h, w, n_labels).copy())
    return q.reshape(h, w, n_labels), trajectory


def inference(scores, image, params, config=None, filters=None):
    """Refine a score map: Q0 = softmax(scores), then mean-field updates."""
    config = config or InferenceConfig()
    s = as_tensor3(scores, "scores")
    img = as_image(image)
    if s.shape[:2] != img.shape[:2]:
        raise ValueError(
            f"scores are {s.shape[0]}x{s.shape[1]} but image is {img.shape[0]}x{img.shape[1]}; upsample first"
        )
    q0 = softmax_channels(s)
    unary = neg_log(q0)
    if filters is None and (params.w1 > 0 or params.w2 > 0) and config.iterations > 0:
        filters = PairwiseFilters.build(img, params, config.method)
    q, trajectory = mean_field(unary, q0, filters, params, config.iterations, config.normalize, config.record_trajectory)
    return InferenceResult(q, argmax_channels(q), trajectory)


def kernel_matrix(image, params):
    """Dense (n, n) pairwise weight matrix, self pairs included. Tiny inputs only."""
    img = as_image(image).astype(np.float64)
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    pos = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    col = img.reshape(-1, 3)
    dp = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    dc = ((col[:, None, :] - col[None, :, :]) ** 2).sum(-1)
    bil = np.exp(-dp / (2 * params.sigma_alpha ** 2) - dc / (2 * params.sigma_beta ** 2))
    spa = np.exp(-dp / (2 * params.sigma_gamma ** 2))
    return params.w1 * bil + params.w2 * spa


def energy(labels, unary, image, params):
    """Exact CRF energy of a labeling, summing pairwise terms over ordered pairs."""
    u, img = _shapes(None, unary, image)
    lab = np.asarray(labels)
    if np.any(lab == VOID_LABEL):
        raise ValueError("energy: label map contains void pixels")
    lab = check_labels(lab, num_classes=u.shape[2])
    if lab.shape != u.shape[:2]:
        raise ValueError(f"labels {lab.shape} and unary {u.shape[:2]} differ in size")
    x = lab.ravel().astype(np.int64)
    unary_term = u.reshape(-1, u.shape[2]).astype(np.float64)[np.arange(x.size), x].sum()
    k = kernel_matrix(img, params)
    differs = x[:, None] != x[None, :]  # diagonal is always False
    return float(unary_term + (k * differs).sum())
