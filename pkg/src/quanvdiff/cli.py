"""Command-line interface.

Commands: train, sample, evaluate, qsim, histogram, make-toy-data.
Exit codes: 0 success, 2 configuration/validation error, 3 runtime
numerical failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import qsim
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .classifier import (
    ClassifierModel,
    ClassifierTrainingError,
    train_eval_classifier,
    _param_shapes,
)
from .config import ConfigError, parse_config
from .data import (
    Dataset,
    from_uint8,
    load_image_folder,
    make_toy_dataset,
    save_image_folder,
    split_dataset,
    to_uint8,
    to_unit,
)
from .denoiser import Denoiser
from .diffusion import NumericalError, ddpm_sample, make_schedule
from .metrics import (
    FeatureSet,
    channel_histograms,
    conditioning_accuracy,
    fid_from_features,
    inception_style_score,
    kid,
)
from .training import read_checkpoint, run_training

GENERATED_MANIFEST = "generated_manifest.tsv"


def _parse_labels(raw: str, n: int, num_classes: int) -> np.ndarray:
    base = [int(part) for part in raw.split(",") if part.strip() != ""]
    if not base:
        raise ConfigError("labels", "no class labels given")
    for lab in base:
        if not 0 <= lab < num_classes:
            raise ConfigError("labels", f"label {lab} outside [0, {num_classes})")
    return np.array([base[i % len(base)] for i in range(n)], dtype=np.int64)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        from dataclasses import replace
        cfg.train = replace(cfg.train, seed=args.seed)
    out_dir = args.out or cfg.output_dir
    final = run_training(cfg, out_dir=out_dir, resume=args.resume,
                         log_fn=(print if args.verbose else None))
    print(f"final checkpoint: {final}")
    return 0


def cmd_sample(args) -> int:
    ck, den_cfg, kind, T, params, _ = read_checkpoint(args.checkpoint)
    from .qsim.circuit import set_precision
    den = Denoiser(den_cfg)
    sched = make_schedule(kind, T)
    labels = _parse_labels(args.labels, args.n, den_cfg.num_classes)
    seed = args.seed if args.seed is not None else ck.seed
    try:
        set_precision(ck.config.get("train.precision", "f64"))
        images = ddpm_sample(den, params, sched, labels, seed=seed)
    finally:
        set_precision("f64")
    os.makedirs(args.out, exist_ok=True)
    from PIL import Image
    lines = ["filename\tlabel"]
    counts = {}
    for i in range(labels.size):
        cls = int(labels[i])
        idx = counts.get(cls, 0)
        counts[cls] = idx + 1
        fname = f"{cls}_{idx:05d}.png"
        Image.fromarray(to_uint8(images[i]), mode="RGB").save(
            os.path.join(args.out, fname))
        lines.append(f"{fname}\t{cls}")
    with open(os.path.join(args.out, GENERATED_MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {labels.size} samples to {args.out}")
    return 0


def _load_generated(manifest_path) -> Dataset:
    root = os.path.dirname(os.path.abspath(manifest_path))
    from PIL import Image
    images, labels, ids = [], [], []
    with open(manifest_path) as fh:
        header = fh.readline()
        if not header.startswith("filename"):
            raise ValueError(f"{manifest_path}: not a sample manifest")
        for line in fh:
            if not line.strip():
                continue
            fname, label = line.rstrip("\n").split("\t")
            with Image.open(os.path.join(root, fname)) as im:
                images.append(from_uint8(np.asarray(im.convert("RGB"))))
            labels.append(int(label))
            ids.append(fname)
    if not images:
        raise ValueError(f"{manifest_path}: empty manifest")
    labels = np.asarray(labels, dtype=np.int64)
    names = [str(c) for c in range(int(labels.max()) + 1)]
    return Dataset(np.stack(images), labels, names, ids)


def save_classifier(path, model: ClassifierModel) -> None:
    save_checkpoint(path, Checkpoint(
        seed=0, step=0,
        config={"classifier.num_classes": str(model.num_classes),
                "classifier.image_size": str(model.image_size),
                "classifier.feature_dim": str(model.feature_dim)},
        params=dict(model.params),
        meta={"val_accuracy": f"{model.val_accuracy:.6f}",
              "extractor_id": model.extractor_id}))


def load_classifier(path) -> ClassifierModel:
    ck = load_checkpoint(path)
    num_classes = int(ck.config["classifier.num_classes"])
    image_size = int(ck.config["classifier.image_size"])
    expected = _param_shapes(image_size, num_classes)
    for name, shape in expected.items():
        if name not in ck.params or ck.params[name].shape != tuple(shape):
            raise ValueError(f"{path}: classifier parameter {name} missing or "
                             "mis-shaped")
    model = ClassifierModel(ck.params, num_classes, image_size)
    model.val_accuracy = float(ck.meta.get("val_accuracy", "0"))
    model.extractor_id = ck.meta.get("extractor_id", "smallcnn")
    return model


def evaluate_sets(real: Dataset, generated: Dataset, clf: ClassifierModel,
                  out_dir: str, seed: int = 0,
                  kid_subset: int = 100, kid_subsets: int = 10,
                  is_splits: int = 10) -> dict:
    """Full metric report: distribution metrics in classifier-feature space,
    conditioning accuracy, per-channel histograms, figures."""
    os.makedirs(out_dir, exist_ok=True)
    real_feats = FeatureSet(clf.features(real.images), clf.extractor_id)
    gen_feats = FeatureSet(clf.features(generated.images), clf.extractor_id)
    results = {"fid": fid_from_features(real_feats, gen_feats)}
    subset = min(kid_subset, len(real), len(generated))
    km, ks = kid(real_feats, gen_feats, subset_size=subset,
                 n_subsets=kid_subsets, seed=seed)
    results["kid_mean"], results["kid_std"] = km, ks
    probs = clf.probabilities(generated.images)
    splits = min(is_splits, len(generated))
    im, istd = inception_style_score(probs, splits=splits)
    results["is_mean"], results["is_std"] = im, istd
    pred = probs.argmax(axis=1)
    report = conditioning_accuracy(generated.labels, pred, clf.num_classes)
    results["accuracy_cond"] = report.accuracy
    results["classifier_val_accuracy"] = clf.val_accuracy

    n_real, n_gen = len(real), len(generated)
    lines = ["metric\tvalue\tstd\tn_real\tn_generated\textractor_id"]
    def row(name, value, std=""):
        lines.append(f"{name}\t{value:.10g}\t{std}\t{n_real}\t{n_gen}\t"
                     f"{clf.extractor_id}")
    row("fid", results["fid"])
    row("kid", km, f"{ks:.10g}")
    row("inception_style_score", im, f"{istd:.10g}")
    row("accuracy_cond", report.accuracy)
    row("classifier_val_accuracy", clf.val_accuracy)
    with open(os.path.join(out_dir, "report.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    pc_lines = ["class\tprecision\trecall\tf1\tsupport"]
    for r in report.per_class:
        pc_lines.append(f"{r['label']}\t{r['precision']:.6f}\t{r['recall']:.6f}"
                        f"\t{r['f1']:.6f}\t{int(r['support'])}")
    pc_lines.append(f"macro\t{report.macro['precision']:.6f}\t"
                    f"{report.macro['recall']:.6f}\t{report.macro['f1']:.6f}\t"
                    f"{len(generated)}")
    with open(os.path.join(out_dir, "per_class.tsv"), "w") as fh:
        fh.write("\n".join(pc_lines) + "\n")

    hists = {}
    for tag, ds in (("real", real), ("generated", generated)):
        h = channel_histograms(to_unit(ds.images))
        hists[tag] = h
        body = ["bin_center\tdensity_red\tdensity_green\tdensity_blue"]
        for i in range(h.bins):
            body.append(f"{h.bin_centers[i]:.8f}\t{h.densities[0][i]:.10g}\t"
                        f"{h.densities[1][i]:.10g}\t{h.densities[2][i]:.10g}")
        body.append(f"# mean\t{h.means[0]:.8f}\t{h.means[1]:.8f}\t{h.means[2]:.8f}")
        body.append(f"# median\t{h.medians[0]:.8f}\t{h.medians[1]:.8f}\t"
                    f"{h.medians[2]:.8f}")
        with open(os.path.join(out_dir, f"histogram_{tag}.tsv"), "w") as fh:
            fh.write("\n".join(body) + "\n")

    from .plotting import (channel_density_figure, per_class_accuracy_figure,
                           sample_grid_figure)
    channel_density_figure(os.path.join(out_dir, "histogram_compare.png"), hists)
    names = (list(real.class_names) if len(real.class_names) >= clf.num_classes
             else [str(c) for c in range(clf.num_classes)])
    real_by_class = [real.images[real.labels == c][:6]
                     for c in range(clf.num_classes)]
    gen_by_class = [generated.images[generated.labels == c][:6]
                    for c in range(clf.num_classes)]
    sample_grid_figure(os.path.join(out_dir, "sample_grid.png"),
                       real_by_class, gen_by_class, names)
    recalls = [r["recall"] for r in report.per_class]
    per_class_accuracy_figure(os.path.join(out_dir, "per_class_accuracy.png"),
                              real.class_names[:clf.num_classes] if
                              len(real.class_names) >= clf.num_classes else
                              [str(c) for c in range(clf.num_classes)],
                              recalls, report.accuracy)
    results["report_dir"] = out_dir
    return results


def cmd_evaluate(args) -> int:
    real = load_image_folder(args.real)
    generated = _load_generated(args.generated)
    if generated.labels.max() >= real.num_classes:
        raise ConfigError(
            "generated", f"generated labels exceed the {real.num_classes} "
            "classes present in the real set")
    if args.classifier and os.path.exists(args.classifier):
        clf = load_classifier(args.classifier)
        if clf.num_classes != real.num_classes:
            raise ConfigError(
                "classifier", f"classifier has {clf.num_classes} classes, "
                f"real data has {real.num_classes}")
    else:
        tr, va = split_dataset(real, (0.9, 0.1), seed=args.seed or 0)
        clf = train_eval_classifier(tr, va, seed=args.seed or 0)
        if args.classifier:
            save_classifier(args.classifier, clf)
    results = evaluate_sets(real, generated, clf, args.out, seed=args.seed or 0)
    for key in ("fid", "kid_mean", "kid_std", "is_mean", "is_std",
                "accuracy_cond", "classifier_val_accuracy"):
        print(f"{key}\t{results[key]:.6g}")
    print(f"report written to {args.out}")
    return 0


def cmd_qsim(args) -> int:
    if args.action != "eval":
        raise ConfigError("qsim", f"unknown action {args.action!r}")
    spec = qsim.AnsatzSpec(args.family, args.n_qubits, args.layers)
    rng = np.random.default_rng(np.random.SeedSequence([int(args.seed), 101]))
    params = rng.uniform(-0.1, 0.1, spec.parameter_count)
    if args.input:
        x = np.array([float(v) for v in args.input.split(",")])
    else:
        x = np.zeros(args.n_qubits)
    if x.size != args.n_qubits:
        raise ConfigError("input", f"expected {args.n_qubits} values, got {x.size}")
    out = qsim.run_circuit(spec, params, x)
    print("qubit\texpectation_z")
    for q, v in enumerate(out):
        print(f"{q}\t{v:.12f}")
    if args.grad:
        jac = qsim.parameter_shift_grad(spec, params, x)
        print("param\t" + "\t".join(f"d_z{q}" for q in range(args.n_qubits)))
        for pi in range(jac.shape[0]):
            print(f"{pi}\t" + "\t".join(f"{v:.12f}" for v in jac[pi]))
    return 0


def cmd_histogram(args) -> int:
    if os.path.isdir(args.images):
        ds = load_image_folder(args.images)
    else:
        ds = _load_generated(args.images)
    h = channel_histograms(to_unit(ds.images), bins=args.bins)
    os.makedirs(args.out, exist_ok=True)
    body = ["bin_center\tdensity_red\tdensity_green\tdensity_blue"]
    for i in range(h.bins):
        body.append(f"{h.bin_centers[i]:.8f}\t{h.densities[0][i]:.10g}\t"
                    f"{h.densities[1][i]:.10g}\t{h.densities[2][i]:.10g}")
    body.append(f"# mean\t{h.means[0]:.8f}\t{h.means[1]:.8f}\t{h.means[2]:.8f}")
    body.append(f"# median\t{h.medians[0]:.8f}\t{h.medians[1]:.8f}\t{h.medians[2]:.8f}")
    out_tsv = os.path.join(args.out, "histogram.tsv")
    with open(out_tsv, "w") as fh:
        fh.write("\n".join(body) + "\n")
    from .plotting import channel_density_figure
    channel_density_figure(os.path.join(args.out, "histogram.png"),
                           {"images": h})
    print(f"channel means: {h.means.round(6).tolist()}")
    print(f"channel medians: {h.medians.round(6).tolist()}")
    print(f"histogram written to {out_tsv}")
    return 0


def cmd_make_toy_data(args) -> int:
    ds = make_toy_dataset(args.n_per_class, image_size=args.image_size,
                          num_classes=args.num_classes, seed=args.seed or 0)
    save_image_folder(ds, args.out)
    print(f"wrote {len(ds)} images ({args.num_classes} classes) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quanvdiff",
        description="Class-conditioned diffusion with quanvolutional hybrid "
                    "blocks on a dense statevector simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run or resume a training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="draw conditional samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True,
                   help="comma-separated class ids, cycled to n samples")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("evaluate", help="metric report for generated images")
    p.add_argument("--real", required=True, help="directory-per-class real images")
    p.add_argument("--generated", required=True, help="sample manifest path")
    p.add_argument("--classifier", default=None,
                   help="classifier checkpoint (trained on demand if absent)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("qsim", help="circuit debug evaluation")
    p.add_argument("action", choices=["eval"])
    p.add_argument("--family", required=True)
    p.add_argument("--n-qubits", type=int, required=True)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", default=None,
                   help="comma-separated angles (defaults to zeros)")
    p.add_argument("--grad", action="store_true",
                   help="print the full parameter-shift jacobian")
    p.set_defaults(fn=cmd_qsim)

    p = sub.add_parser("histogram", help="per-channel density report")
    p.add_argument("--images", required=True,
                   help="image folder or sample manifest")
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_histogram)

    p = sub.add_parser("make-toy-data", help="write the deterministic toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-class", type=int, default=200)
    p.add_argument("--image-size", type=int, default=8)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_toy_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ClassifierTrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
