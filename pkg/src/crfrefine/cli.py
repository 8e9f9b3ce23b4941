"""Command-line front end: refine, eval, tune, rf-calc, filter-bench, make-synthetic."""
import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import atrous, evaluation, synthetic
from .core import atomic_write, load_image, load_labels, load_tensor, save_labels, save_tensor
from .densecrf import InferenceConfig, KernelParams, inference
from .filtering import Permutohedral, gaussian_filter_exact
from .tune import Range, SearchSpec, default_jobs, grid_search


class ManifestError(ValueError):
    pass


def read_manifest(path, n_fields):
    """Tab-separated manifest lines; paths resolve against the manifest's directory.

    ``n_fields`` is the set of allowed field counts.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in n_fields or any(not f for f in fields):
                raise ManifestError(f"{path}:{lineno}: expected {sorted(n_fields)} non-empty tab-separated fields")
            entries.append([os.path.join(base, f) for f in fields])
    if not entries:
        raise ManifestError(f"{path}: no entries")
    return entries


def _refine_entry(fields):
    """Refine one (scores, image, [gt,] output) entry. Runs in worker processes."""
    entry, params, iterations, factor, snapshots, out_dir = fields
    score_path, image_path, out_path = entry[0], entry[1], entry[-1]
    if out_dir:
        out_path = os.path.join(out_dir, os.path.basename(out_path))
    scores = atrous.bilinear_upsample(load_tensor(score_path), factor)
    image = load_image(image_path)
    scores = _fit(scores, image.shape[:2], factor)
    config = InferenceConfig(iterations=iterations, record_trajectory=snapshots)
    result = inference(scores, image, params, config)
    save_labels(out_path, result.labels)
    if snapshots:
        stem = os.path.splitext(out_path)[0]
        for t, (q, logq) in enumerate(zip(result.trajectory, result.log_trajectory()), 1):
            save_tensor(f"{stem}_q{t:02d}.crft", q)
            save_tensor(f"{stem}_logq{t:02d}.crft", logq)
    return out_path


def _fit(scores, shape, factor):
    # upsampled maps of ceil(H/8) x ceil(W/8) scores overhang the image by < factor pixels
    h, w = shape
    sh, sw = scores.shape[:2]
    if sh < h or sw < w or sh - h >= factor or sw - w >= factor:
        raise ValueError(f"upsampled scores {sh}x{sw} do not match image {h}x{w}")
    return np.ascontiguousarray(scores[:h, :w])


def _params_from_args(args):
    params = KernelParams()
    if args.params:
        with open(args.params, encoding="utf-8") as fh:
            doc = json.load(fh)
        params = KernelParams(**doc.get("best", doc))
    override = {k: getattr(args, k) for k in ("w1", "w2", "sigma_alpha", "sigma_beta", "sigma_gamma")}
    merged = dict(params.as_dict(), **{k: v for k, v in override.items() if v is not None})
    return KernelParams(**merged)


def cmd_refine(args):
    entries = read_manifest(args.manifest, {3, 4})
    params = _params_from_args(args)
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    jobs = _jobs(args)
    work = [(e, params, args.iterations, args.upsample, args.snapshots, args.out_dir) for e in entries]
    failures = []

    def report(entry, exc):
        failures.append(entry[0])
        print(f"refine: {entry[0]}: {exc}", file=sys.stderr)

    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_refine_entry, w) for w in work]
            for w, fut in zip(work, futures):
                try:
                    fut.result()
                except Exception as exc:  # noqa: BLE001 - keep going, report at the end
                    report(w[0], exc)
    else:
        for w in work:
            try:
                _refine_entry(w)
            except Exception as exc:  # noqa: BLE001
                report(w[0], exc)
    if failures:
        print(f"refine: {len(failures)} of {len(entries)} entries failed", file=sys.stderr)
        return 1
    return 0


def _emit(text, path):
    if path:
        atomic_write(path, text.encode("utf-8"))
    else:
        sys.stdout.write(text)


def cmd_eval(args):
    entries = read_manifest(args.manifest, {4})
    cm = evaluation.ConfusionMatrix(args.num_classes)
    pairs = []
    failures = 0
    for entry in entries:
        pred_path = entry[3]
        if args.pred_dir:
            pred_path = os.path.join(args.pred_dir, os.path.basename(pred_path))
        try:
            pred, gt = load_labels(pred_path), load_labels(entry[2])
            cm.accumulate(pred, gt)
        except Exception as exc:  # noqa: BLE001
            failures += 1
            print(f"eval: {pred_path}: {exc}", file=sys.stderr)
            continue
        pairs.append((pred, gt))
    if not pairs:
        return 1
    per_class, mean = evaluation.mean_iou(cm)
    _emit(evaluation.class_iou_csv(per_class, mean), args.iou_csv)
    if args.radii:
        radii = _int_list(args.radii)
        rows = evaluation.trimap_curve(pairs, radii, args.num_classes)
        _emit(evaluation.curve_csv(rows), args.trimap_csv)
    return 1 if failures else 0


def cmd_tune(args):
    entries = read_manifest(args.manifest, {3})
    dataset = []
    for score_path, image_path, gt_path in entries:
        image = load_image(image_path)
        scores = _fit(atrous.bilinear_upsample(load_tensor(score_path), args.upsample), image.shape[:2], args.upsample)
        dataset.append((scores, image, load_labels(gt_path)))
    spec = SearchSpec(
        w1_range=_range(args.w1_range),
        sigma_alpha_range=_range(args.sigma_alpha_range),
        sigma_beta_range=_range(args.sigma_beta_range),
        w2=args.w2,
        sigma_gamma=args.sigma_gamma,
        refine_rounds=args.rounds,
        subset_size=args.subset,
        iterations=args.iterations,
    )
    result = grid_search(dataset, spec, jobs=_jobs(args))
    _emit(result.to_json(), args.out)
    return 0


def cmd_rf_calc(args):
    lines = ["name,rf,rf_padded,jump,published,convention,match"]
    if args.layers:
        with open(args.layers, encoding="utf-8") as fh:
            layers = atrous.parse_layer_file(fh.read())
        rf, jump = atrous.receptive_field(layers)
        lines = ["layer,kernel,stride,input_stride,rf,jump"]
        for i in range(1, len(layers) + 1):
            r, j = atrous.receptive_field(layers[:i])
            l = layers[i - 1]
            lines.append(f"{l.name},{l.kernel},{l.stride},{l.input_stride},{r},{j}")
        lines.append(f"total,,,,{rf},{jump}")
    else:
        names = [args.preset] if args.preset else list(atrous.PRESETS)
        for name in names:
            if name not in atrous.PRESETS:
                print(f"rf-calc: unknown preset {name!r}; known: {', '.join(atrous.PRESETS)}", file=sys.stderr)
                return 2
            rf, rf_pad, jump, published, conv = atrous.preset_receptive_field(name)
            got = rf if conv == "conv" else rf_pad
            lines.append(f"{name},{rf},{rf_pad},{jump},{published},{conv},{'yes' if got == published else 'NO'}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_filter_bench(args):
    rng = np.random.default_rng(args.seed)
    # features spread so pairwise distances span roughly [0, 20]
    feats = rng.uniform(0, 20 / np.sqrt(args.dim), (args.n, args.dim)).astype(np.float32)
    values = rng.random((args.n, args.channels)).astype(np.float32)
    Permutohedral(feats[:8])  # compile the blur kernel outside the timings
    timings = {"exact": [], "permutohedral": []}
    for _ in range(args.trials):
        t = time.perf_counter()
        gaussian_filter_exact(values, feats)
        timings["exact"].append(time.perf_counter() - t)
        t = time.perf_counter()
        Permutohedral(feats).filter(values)
        timings["permutohedral"].append(time.perf_counter() - t)
    doc = {"n": args.n, "dim": args.dim, "channels": args.channels, "trials": args.trials}
    for name, ts in timings.items():
        doc[name] = {f"p{q}": round(float(np.percentile(ts, q)), 6) for q in (50, 90, 100)}
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_make_synthetic(args):
    synthetic.write_dataset(
        args.out_dir, args.seed, args.size, args.classes, args.noise,
        count=args.count, holdout=args.holdout, factor=args.factor,
    )
    return 0


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _range(text):
    parts = [float(p) for p in text.split(":")]
    if len(parts) == 1:
        return Range(parts[0], 1.0, parts[0])
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"range must be start:step:stop, got {text!r}")
    return Range(*parts)


def _jobs(args):
    return args.jobs if args.jobs else default_jobs()


def build_parser():
    p = argparse.ArgumentParser(prog="crf-refine", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def crf_flags(sp):
        sp.add_argument("--params", help="JSON file with kernel parameters (tune output accepted)")
        sp.add_argument("--w1", type=float)
        sp.add_argument("--w2", type=float)
        sp.add_argument("--sigma-alpha", type=float)
        sp.add_argument("--sigma-beta", type=float)
        sp.add_argument("--sigma-gamma", type=float)

    r = sub.add_parser("refine", help="upsample score maps and refine them with the dense CRF")
    r.add_argument("--manifest", required=True)
    crf_flags(r)
    r.add_argument("--iterations", type=int, default=10)
    r.add_argument("--upsample", type=int, default=8)
    r.add_argument("--snapshots", action="store_true", help="write Q and log Q after every iteration")
    r.add_argument("--out-dir", help="write predictions here instead of the manifest's paths")
    r.add_argument("--jobs", type=int, default=0)
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", help="mean IOU and trimap curves")
    e.add_argument("--manifest", required=True)
    e.add_argument("--num-classes", type=int, required=True)
    e.add_argument("--radii", help="comma-separated trimap radii")
    e.add_argument("--pred-dir", help="read predictions from here instead of the manifest's paths")
    e.add_argument("--iou-csv")
    e.add_argument("--trimap-csv")
    e.set_defaults(func=cmd_eval)

    t = sub.add_parser("tune", help="coarse-to-fine search of w1, sigma_alpha, sigma_beta")
    t.add_argument("--manifest", required=True)
    t.add_argument("--w1-range", default="5:1:10")
    t.add_argument("--sigma-alpha-range", default="50:10:100")
    t.add_argument("--sigma-beta-range", default="3:1:10")
    t.add_argument("--w2", type=float, default=3.0)
    t.add_argument("--sigma-gamma", type=float, default=3.0)
    t.add_argument("--rounds", type=int, default=2)
    t.add_argument("--subset", type=int, default=0)
    t.add_argument("--iterations", type=int, default=10)
    t.add_argument("--upsample", type=int, default=8)
    t.add_argument("--out")
    t.add_argument("--jobs", type=int, default=0)
    t.set_defaults(func=cmd_tune)

    rf = sub.add_parser("rf-calc", help="receptive fields of presets or a layer file")
    g = rf.add_mutually_exclusive_group()
    g.add_argument("--preset")
    g.add_argument("--layers", help="text file, one 'k,stride,input_stride' per line")
    rf.set_defaults(func=cmd_rf_calc)

    fb = sub.add_parser("filter-bench", help="time exact vs permutohedral filtering")
    fb.add_argument("--n", type=int, default=2048)
    fb.add_argument("--dim", type=int, default=5)
    fb.add_argument("--channels", type=int, default=21)
    fb.add_argument("--trials", type=int, default=5)
    fb.add_argument("--seed", type=int, default=0)
    fb.set_defaults(func=cmd_filter_bench)

    ms = sub.add_parser("make-synthetic", help="write the synthetic benchmark")
    ms.add_argument("--seed", type=int, default=7)
    ms.add_argument("--size", type=int, default=96)
    ms.add_argument("--classes", type=int, default=4)
    ms.add_argument("--noise", type=float, default=0.3)
    ms.add_argument("--count", type=int, default=20)
    ms.add_argument("--holdout", type=int, default=5)
    ms.add_argument("--factor", type=int, default=8)
    ms.add_argument("--out-dir", required=True)
    ms.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
