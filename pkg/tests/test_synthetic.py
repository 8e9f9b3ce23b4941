import numpy as np
import pytest

from crfrefine.atrous import bilinear_upsample
from crfrefine.core import argmax_channels, load_labels, load_tensor
from crfrefine.evaluation import ConfusionMatrix, mean_iou
from crfrefine.synthetic import make_dataset, write_dataset


def unrefined_miou(samples, factor=8):
    cm = ConfusionMatrix(samples[0].scores.shape[2])
    for s in samples:
        cm.accumulate(argmax_channels(bilinear_upsample(s.scores, factor)), s.gt)
    return mean_iou(cm)[1]


def test_shapes_and_types():
    s = make_dataset(1, (48, 64), 5, 0.2, 1)[0]
    assert s.scores.shape == (6, 8, 5) and s.scores.dtype == np.float32
    assert s.image.shape == (48, 64, 3) and s.image.dtype == np.uint8
    assert s.gt.shape == (48, 64) and s.gt.max() < 5


def test_noise_zero_factor_one_is_perfect():
    samples = make_dataset(2, 32, 4, 0.0, 3, factor=1)
    for s in samples:
        np.testing.assert_array_equal(argmax_channels(s.scores), s.gt)
    assert unrefined_miou(samples, 1) == 1.0


def test_noise_flips_about_the_requested_fraction():
    samples = make_dataset(3, 96, 4, 0.3, 10)
    flipped = total = 0
    for s in samples:
        coarse = s.gt[4::8, 4::8]
        flipped += np.sum(argmax_channels(s.scores) != coarse)
        total += coarse.size
    assert 0.25 < flipped / total < 0.35


def test_benchmark_unrefined_range():
    samples = make_dataset(7, 96, 4, 0.3, 20)
    assert 0.45 < unrefined_miou(samples) < 0.6


def test_same_seed_is_bit_identical(tmp_path):
    write_dataset(tmp_path / "a", 7, 32, 3, 0.3, count=3, holdout=1)
    write_dataset(tmp_path / "b", 7, 32, 3, 0.3, count=3, holdout=1)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_written_manifests(tmp_path):
    samples = write_dataset(tmp_path, 4, 16, 2, 0.1, count=2, holdout=1)
    lines = (tmp_path / "manifest.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["scores_000.crft", "image_000.ppm", "gt_000.pgm", "pred_000.pgm"]
    assert len(lines) == 2
    assert (tmp_path / "holdout.tsv").read_text() == "scores_002.crft\timage_002.ppm\tgt_002.pgm\n"
    np.testing.assert_array_equal(load_tensor(tmp_path / "scores_001.crft"), samples[1].scores)
    np.testing.assert_array_equal(load_labels(tmp_path / "gt_002.pgm"), samples[2].gt)


def test_bad_arguments():
    with pytest.raises(ValueError):
        make_dataset(0, 30, 3, 0.1, 1)  # not a multiple of 8
    with pytest.raises(ValueError):
        make_dataset(0, 32, 3, 1.5, 1)
    with pytest.raises(ValueError):
        make_dataset(0, 32, 0, 0.1, 1)
