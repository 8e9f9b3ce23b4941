"""Deterministic desk-scale segmentation benchmark.

Each sample is a piecewise-constant label map with smooth region
boundaries, an RGB image coloured per class with additive noise, and a
coarse score map standing in for a classifier's output: one-hot logits of
the ground truth sampled every ``factor`` pixels, with each coarse cell's
label flipped to a random other class with probability ``noise``.
"""
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import save_image, save_labels, save_tensor

LOGIT_SCALE = 4.0
COLOR_NOISE = 25.0


@dataclass
class Sample:
    scores: np.ndarray  # (size/factor, size/factor, classes) float32
    image: np.ndarray  # (size, size, 3) uint8
    gt: np.ndarray  # (size, size) uint16


def _palette(rng, num_classes):
    # well separated colours: spread hues, then jitter
    base = rng.permutation(num_classes) / num_classes
    cols = []
    for t in base:
        angle = 2 * np.pi * t
        c = 128 + 100 * np.array([np.cos(angle), np.cos(angle - 2.1), np.cos(angle + 2.1)])
        cols.append(c + rng.uniform(-15, 15, 3))
    return np.clip(np.array(cols), 0, 255)


def make_sample(rng, size, num_classes, noise, factor=8):
    """One sample; ``size`` is an int (square) or a (height, width) pair."""
    h, w = (size, size) if np.isscalar(size) else size
    if h % factor or w % factor:
        raise ValueError(f"size {h}x{w} is not a multiple of factor {factor}")
    smooth = min(h, w) / 6.0
    fields = np.stack(
        [ndimage.gaussian_filter(rng.standard_normal((h, w)), smooth, mode="reflect") for _ in range(num_classes)],
        axis=-1,
    )
    gt = np.argmax(fields, axis=-1).astype(np.uint16)

    palette = _palette(rng, num_classes)
    image = palette[gt] + rng.normal(0.0, COLOR_NOISE, (h, w, 3))
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    coarse = gt[factor // 2::factor, factor // 2::factor].astype(np.int64)
    flip = rng.random(coarse.shape) < noise
    shift = rng.integers(1, num_classes, coarse.shape) if num_classes > 1 else np.zeros(coarse.shape, np.int64)
    coarse = np.where(flip, (coarse + shift) % num_classes, coarse)
    scores = np.zeros(coarse.shape + (num_classes,), dtype=np.float32)
    np.put_along_axis(scores, coarse[..., None], LOGIT_SCALE, axis=-1)
    return Sample(scores, image, gt)


def make_dataset(seed, size, num_classes, noise, count, factor=8):
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    if num_classes < 1 or count < 1:
        raise ValueError("need at least one class and one sample")
    rng = np.random.default_rng(seed)
    return [make_sample(rng, size, num_classes, noise, factor) for _ in range(count)]


def write_dataset(out_dir, seed, size, num_classes, noise, count=20, holdout=5, factor=8):
    """Write samples plus ``manifest.tsv`` (evaluation) and ``holdout.tsv`` (tuning).

    Evaluation lines are ``scores<TAB>image<TAB>gt<TAB>prediction``; tuning
    lines are ``scores<TAB>image<TAB>gt``.  Paths are relative to ``out_dir``.
    """
    os.makedirs(out_dir, exist_ok=True)
    samples = make_dataset(seed, size, num_classes, noise, count + holdout, factor)
    eval_lines, tune_lines = [], []
    for i, s in enumerate(samples):
        tag = f"{i:03d}"
        names = (f"scores_{tag}.crft", f"image_{tag}.ppm", f"gt_{tag}.pgm")
        save_tensor(os.path.join(out_dir, names[0]), s.scores)
        save_image(os.path.join(out_dir, names[1]), s.image)
        save_labels(os.path.join(out_dir, names[2]), s.gt)
        if i < count:
            eval_lines.append("\t".join(names + (f"pred_{tag}.pgm",)))
        else:
            tune_lines.append("\t".join(names))
    with open(os.path.join(out_dir, "manifest.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(eval_lines) + "\n")
    with open(os.path.join(out_dir, "holdout.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(tune_lines) + ("\n" if tune_lines else ""))
    return samples
