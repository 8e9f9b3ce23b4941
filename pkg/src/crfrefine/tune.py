"""Coarse-to-fine grid search of the appearance-kernel parameters (w1, sigma_alpha, sigma_beta)."""
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .densecrf import InferenceConfig, KernelParams, PairwiseFilters, inference
from .evaluation import ConfusionMatrix, mean_iou


@dataclass(frozen=True)
class Range:
    """Inclusive ``start:step:stop`` range, MATLAB style."""

    start: float
    step: float
    stop: float

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive: {self}")
        if self.stop < self.start:
            raise ValueError(f"empty range: {self}")

    def values(self):
        n = int(np.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [_clean(self.start + i * self.step) for i in range(n)]


def _clean(x):
    # keep grid values free of float noise so keys and reports are stable
    return float(round(x, 9))


@dataclass(frozen=True)
class SearchSpec:
    w1_range: Range = Range(5, 1, 10)
    sigma_alpha_range: Range = Range(50, 10, 100)
    sigma_beta_range: Range = Range(3, 1, 10)
    w2: float = 3.0
    sigma_gamma: float = 3.0
    refine_rounds: int = 2  # total rounds, the coarse grid included
    subset_size: int = 0  # 0 = use every sample given
    iterations: int = 10

    def __post_init__(self):
        if self.refine_rounds < 1:
            raise ValueError("refine_rounds must be >= 1")


@dataclass
class TuneResult:
    best: KernelParams
    score: float
    trace: list = field(default_factory=list)  # [(KernelParams, score, round)]

    def to_json(self):
        doc = {
            "best": {k: round(v, 6) for k, v in self.best.as_dict().items()},
            "score": round(self.score, 6),
            "trace": [
                dict({k: round(v, 6) for k, v in p.as_dict().items()}, score=round(s, 6), round=r)
                for p, s, r in self.trace
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


def _evaluate_group(dataset, sigma_alpha, sigma_beta, w1_values, spec):
    """Mean IOU of every w1 for one (sigma_alpha, sigma_beta); lattices built once per image."""
    n_labels = dataset[0][0].shape[2]
    config = InferenceConfig(iterations=spec.iterations)
    cms = {w1: ConfusionMatrix(n_labels) for w1 in w1_values}
    for scores, image, gt in dataset:
        shape = KernelParams(1.0, spec.w2, sigma_alpha, sigma_beta, spec.sigma_gamma)
        filters = PairwiseFilters.build(image, shape)
        for w1 in w1_values:
            params = KernelParams(w1, spec.w2, sigma_alpha, sigma_beta, spec.sigma_gamma)
            labels = inference(scores, image, params, config, filters=filters).labels
            cms[w1].accumulate(labels, gt)
    return {w1: mean_iou(cm)[1] for w1, cm in cms.items()}


def _evaluate(dataset, candidates, spec, jobs):
    """Score candidate (w1, sa, sb) triples; returns {triple: score}."""
    groups = {}
    for w1, sa, sb in candidates:
        groups.setdefault((sa, sb), []).append(w1)
    keys = sorted(groups)
    if jobs > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_evaluate_group, dataset, sa, sb, groups[(sa, sb)], spec) for sa, sb in keys]
            results = [f.result() for f in futures]
    else:
        results = [_evaluate_group(dataset, sa, sb, groups[(sa, sb)], spec) for sa, sb in keys]
    scores = {}
    for (sa, sb), res in zip(keys, results):
        for w1, s in res.items():
            scores[(w1, sa, sb)] = s
    return scores


def _refined_axis(center, step, lower_open):
    half = step / 2.0
    vals = [_clean(center + k * half) for k in (-2, -1, 0, 1, 2)]
    if lower_open:
        return [v for v in vals if v > 0]
    return [v for v in vals if v >= 0]


def grid_search(dataset, spec=None, jobs=1):
    """Coarse grid, then rounds that halve the step around the incumbent.

    ``dataset`` holds (scores, image, gt) triples with scores already at
    image resolution.  Ties go to the lexicographically smallest
    (w1, sigma_alpha, sigma_beta).
    """
    spec = spec or SearchSpec()
    dataset = list(dataset)
    if spec.subset_size:
        dataset = dataset[:spec.subset_size]
    if not dataset:
        raise ValueError("grid_search needs at least one sample")

    axes = [spec.w1_range.values(), spec.sigma_alpha_range.values(), spec.sigma_beta_range.values()]
    steps = [spec.w1_range.step, spec.sigma_alpha_range.step, spec.sigma_beta_range.step]
    seen = {}
    trace = []
    best_key = None
    for rnd in range(1, spec.refine_rounds + 1):
        if rnd > 1:
            axes = [
                _refined_axis(best_key[0], steps[0], lower_open=False),
                _refined_axis(best_key[1], steps[1], lower_open=True),
                _refined_axis(best_key[2], steps[2], lower_open=True),
            ]
            steps = [s / 2.0 for s in steps]
        candidates = [c for c in itertools.product(*axes) if c not in seen]
        scores = _evaluate(dataset, candidates, spec, jobs)
        for c in candidates:  # grid order
            seen[c] = scores[c]
            trace.append((KernelParams(c[0], spec.w2, c[1], c[2], spec.sigma_gamma), scores[c], rnd))
        best_key = min(seen, key=lambda c: (-seen[c], c))

    best = KernelParams(best_key[0], spec.w2, best_key[1], best_key[2], spec.sigma_gamma)
    return TuneResult(best, seen[best_key], trace)


def default_jobs():
    env = os.environ.get("CRF_REFINE_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
