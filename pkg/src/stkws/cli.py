"""Command-line entry point: ``stkws {footprint,train,eval,infer,features,fixture}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad arguments,
missing or malformed input files, invalid dataset layout).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import extract_features, load_clip
from .checkpoint import content_hash, load_checkpoint, save_checkpoint
from .data import CLASS_NAMES, FeatureStore, make_batches, scan_dataset
from .evaluation import evaluate_posteriors
from .exceptions import ConfigError, KWSError, ShapeError, ValidationError
from .models import VARIANTS, build, footprint, get_spec
from .training import TrainConfig, fit

log = logging.getLogger("stkws")


class UsageError(Exception):
    pass


def _write_run_manifest(out_dir: Path, args, extra: dict) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    payload = {"stkws_version": __version__, "config": config, **extra}
    path = out_dir / f"run_manifest_{args.command}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _scan(args):
    try:
        return scan_dataset(args.dataset_root, seed=args.seed)
    except ConfigError as exc:
        raise UsageError(f"invalid dataset: {exc}") from exc


def cmd_footprint(args) -> int:
    fp = footprint(get_spec(args.variant))
    print(fp.to_text())
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"footprint_{args.variant}.csv").write_text(fp.to_csv())
    return 0


def cmd_train(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, initial_lr=args.lr,
                         seed=args.seed, variant=args.variant)
    manifest = _scan(args)
    manifest.to_csv(out / "dataset_manifest.csv")
    if not manifest.train:
        raise UsageError("training split is empty")
    if not manifest.dev:
        raise UsageError("development split is empty")
    store = FeatureStore(manifest.root, args.cache_dir)
    dev = store.arrays(manifest.dev)
    dtype = np.float64 if args.float64 else np.float32
    model = build(args.variant, seed=args.seed, dtype=dtype)

    def batches(epoch):
        return make_batches(manifest, "train", config.batch_size, config.seed, epoch, store,
                            augmentation=args.augment)

    def report(r):
        print(f"epoch {r.epoch:3d}  train_loss {r.train_loss:.4f}  dev_loss {r.dev_loss:.4f}  "
              f"dev_acc {r.dev_accuracy:.4f}  lr {r.lr:.3g}", flush=True)

    model, history = fit(model, batches, dev, config, on_epoch=report)
    ckpt = save_checkpoint(out / "model.ckpt", model, {"seed": args.seed, "best_epoch": history.best_epoch})
    history.to_csv(out / "history.csv")
    _write_run_manifest(out, args, {"checkpoint": ckpt.name, "checkpoint_sha1": content_hash(ckpt),
                                    "best_epoch": history.best_epoch, "aborted": history.aborted,
                                    "word_counts": manifest.word_counts})
    if history.aborted:
        print(f"training aborted: {history.aborted}; kept the last good checkpoint", file=sys.stderr)
        return 1
    print(f"wrote {ckpt}")
    return 0


def _load(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc


def cmd_eval(args) -> int:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, _ = _load(args.checkpoint)
    manifest = _scan(args)
    X, y = FeatureStore(manifest.root, args.cache_dir).arrays(manifest.split(args.split))
    if len(y) == 0:
        raise UsageError(f"split {args.split!r} is empty")
    probs = np.concatenate([model.predict_proba(X[i:i + 500].astype(model.dtype))
                            for i in range(0, len(y), 500)])
    report = evaluate_posteriors(probs, y, CLASS_NAMES)
    report.write(out, CLASS_NAMES, prefix=f"{args.split}_")
    _write_run_manifest(out, args, {"checkpoint_sha1": content_hash(args.checkpoint),
                                    "accuracy": report.accuracy, "examples": int(len(y)),
                                    "skipped_keywords": report.skipped_keywords})
    print(f"{args.split} accuracy {report.accuracy:.4f} over {len(y)} examples")
    if report.average_curve is not None:
        print(f"average ROC AUC {report.average_curve.auc:.4f} over {len(report.keyword_curves)} keywords")
    if report.skipped_keywords:
        print(f"no ROC for {', '.join(report.skipped_keywords)} (missing positives)")
    return 0


def cmd_infer(args) -> int:
    model, _ = _load(args.checkpoint)
    if not Path(args.wav).is_file():
        raise UsageError(f"no such file: {args.wav}")
    try:
        clip = load_clip(args.wav)
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc
    feats = extract_features(clip)[None].astype(model.dtype)
    probs = model.predict_proba(feats)[0]
    top = int(probs.argmax())
    print(f"prediction: {CLASS_NAMES[top]} ({probs[top]:.4f})")
    for name, p in zip(CLASS_NAMES, probs):
        print(f"  {name:<10} {p:.9f}")
    if args.attention:
        if model.attention is None:
            raise UsageError(f"{model.spec.name} has no attention module")
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        weights = model.attention_weights(feats)[0]
        path = out / f"attention_{Path(args.wav).stem}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame"] + [f"head{i}" for i in range(weights.shape[0])])
            for t in range(weights.shape[1]):
                w.writerow([t] + [repr(float(v)) for v in weights[:, t]])
        print(f"wrote {path}")
    return 0


def cmd_features(args) -> int:
    out = Path(args.output_dir)
    manifest = _scan(args)
    store = FeatureStore(manifest.root, out / "features")
    n = 0
    for split in ("train", "dev", "test"):
        for entry in manifest.split(split):
            store.get(entry)
            n += 1
    manifest.to_csv(out / "dataset_manifest.csv")
    _write_run_manifest(out, args, {"cached": n})
    print(f"cached features for {n} examples under {out / 'features'}")
    return 0


def cmd_fixture(args) -> int:
    from .synthetic import write_fixture

    words = [w for w in args.words.split(",") if w] if args.words else None
    write_fixture(args.output_dir, per_word=args.per_word, words=words, seed=args.seed)
    print(f"wrote synthetic dataset to {args.output_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stkws", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    variants = list(VARIANTS)

    def common(p, dataset=True):
        p.add_argument("--output-dir", "--output_dir", dest="output_dir", default="stkws_out")
        p.add_argument("--seed", type=int, default=0)
        if dataset:
            p.add_argument("--dataset-root", "--dataset_root", dest="dataset_root", required=True)
            p.add_argument("--cache-dir", "--cache_dir", dest="cache_dir", default=None,
                           help="feature cache directory (read and written)")

    p = sub.add_parser("footprint", help="print the parameter/multiplier table of a variant")
    p.add_argument("variant", choices=variants, metavar="VARIANT", help=f"one of {', '.join(variants)}")
    p.add_argument("--output-dir", "--output_dir", dest="output_dir", default="stkws_out")
    p.set_defaults(func=cmd_footprint)

    p = sub.add_parser("train", help="train a variant and keep the best dev checkpoint")
    common(p)
    p.add_argument("--variant", choices=variants, default="ST-AttNet4")
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--batch-size", "--batch_size", dest="batch_size", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--augment", action="store_true", help="random time shift and noise (off by default)")
    p.add_argument("--float64", action="store_true", help="train in double precision")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy, confusion matrix and ROC curves")
    p.add_argument("checkpoint")
    common(p)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify one 16 kHz mono WAV file")
    p.add_argument("checkpoint")
    p.add_argument("wav")
    p.add_argument("--attention", action="store_true", help="also write per-frame attention weights")
    p.add_argument("--output-dir", "--output_dir", dest="output_dir", default="stkws_out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("features", help="extract and cache features for a dataset")
    common(p, dataset=False)
    p.add_argument("--dataset-root", "--dataset_root", dest="dataset_root", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fixture", help="write a small synthetic dataset in the V1 layout")
    p.add_argument("output_dir")
    p.add_argument("--per-word", "--per_word", dest="per_word", type=int, default=10)
    p.add_argument("--words", default=None, help="comma-separated word folders (default: keywords and 4 fillers)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeError) as exc:
        print(f"stkws {args.command}: {exc}", file=sys.stderr)
        return 2
    except (KWSError, OSError, FloatingPointError) as exc:
        print(f"stkws {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
