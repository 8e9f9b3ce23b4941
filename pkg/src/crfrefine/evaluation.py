"""Segmentation metrics: confusion matrices, mean IOU, trimap-band curves."""
import math

import numpy as np
from scipy import ndimage

from .core import VOID_LABEL, check_labels


class ConfusionMatrix:
    """Pixel tallies, rows = ground truth, columns = prediction. Void pixels are skipped."""

    def __init__(self, num_classes, void_label=VOID_LABEL):
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.void_label = void_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred, gt, mask=None):
        pred = check_labels(pred, self.num_classes, self.void_label)
        gt = check_labels(gt, self.num_classes, self.void_label)
        if pred.shape != gt.shape:
            raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
        keep = gt != self.void_label
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != gt.shape:
                raise ValueError(f"mask {mask.shape} and ground truth {gt.shape} differ in size")
            keep &= mask
        p = pred[keep].astype(np.int64)
        if np.any(p == self.void_label):
            raise ValueError("prediction contains void label on an evaluated pixel")
        g = gt[keep].astype(np.int64)
        n = self.num_classes
        self.counts += np.bincount(n * g + p, minlength=n * n).reshape(n, n)
        return self

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("class counts differ")
        out = ConfusionMatrix(self.num_classes, self.void_label)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self):
        return int(self.counts.sum())


def per_class_iou(cm):
    """IOU per class; NaN where TP + FP + FN == 0."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    denom = c.sum(axis=0) + c.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / denom, np.nan)


def mean_iou(cm):
    """Return (per-class IOU list, mean over classes with a non-zero denominator)."""
    iou = per_class_iou(cm)
    valid = ~np.isnan(iou)
    if not valid.any():
        raise ValueError("mean IOU undefined: confusion matrix is empty")
    return iou.tolist(), float(iou[valid].mean())


def pixel_accuracy(cm):
    total = cm.total
    if total == 0:
        raise ValueError("pixel accuracy undefined: confusion matrix is empty")
    return float(np.trace(cm.counts)) / total


def _boundary_pixels(gt):
    # pixels with a 4-neighbour of a different label
    edge = np.zeros(gt.shape, dtype=bool)
    dy = gt[1:, :] != gt[:-1, :]
    dx = gt[:, 1:] != gt[:, :-1]
    edge[1:, :] |= dy
    edge[:-1, :] |= dy
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    return edge


def trimap_band(gt, radius, void_label=VOID_LABEL):
    """Pixels near object boundaries.

    With void pixels present, the band is every pixel within Chebyshev
    distance ``radius`` of a void pixel.  Without void, the seeds are the
    pixels on either side of an inter-class boundary and the band keeps
    ``radius`` pixels on each side (distance <= radius - 1 from a seed).
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    gt = check_labels(gt)
    void = gt == void_label
    if void.any():
        seeds, reach = void, radius
    else:
        seeds, reach = _boundary_pixels(gt), radius - 1
    if not seeds.any():
        return np.zeros(gt.shape, dtype=bool)
    dist = ndimage.distance_transform_cdt(~seeds, metric="chessboard")
    return dist <= reach


def trimap_curve(pairs, radii, num_classes, void_label=VOID_LABEL):
    """Band metrics for each radius over (pred, gt) pairs.

    Returns rows ``(radius, mean_iou, pixel_accuracy)``; metrics are NaN for
    a radius whose band holds no evaluable pixel.
    """
    pairs = list(pairs)
    rows = []
    for r in radii:
        cm = ConfusionMatrix(num_classes, void_label)
        for pred, gt in pairs:
            cm.accumulate(pred, gt, trimap_band(gt, r, void_label))
        if cm.total == 0:
            rows.append((r, math.nan, math.nan))
        else:
            rows.append((r, mean_iou(cm)[1], pixel_accuracy(cm)))
    return rows


def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def curve_csv(rows):
    lines = ["radius,mean_iou,pixel_acc"]
    lines += [f"{r},{_fmt(m)},{_fmt(a)}" for r, m, a in rows]
    return "\n".join(lines) + "\n"


def class_iou_csv(per_class, mean):
    lines = ["class,iou"]
    lines += [f"{c},{_fmt(v)}" for c, v in enumerate(per_class)]
    lines.append(f"mean,{_fmt(mean)}")
    return "\n".join(lines) + "\n"
