"""Command-line entry point.

Subcommands cover the whole pipeline: ``superpixels`` and ``mix`` drive
the augmentation kernels, ``eval``/``ood-eval`` score prediction corpora,
``train-toy`` runs the consistency trainer, ``verify-bound`` checks the
risk bound numerically, and ``gen-synth`` writes a synthetic corpus.

Every command is deterministic given its flags (seeds default to 0),
machine-readable output goes to stdout only, and failures exit nonzero
with a message on stderr.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import bound, consistency, imgcore, metrics, mixer, superpixel

PMAP_MAGIC = b"PMAP"


# ---------------------------------------------------------------------------
# Probability maps on disk: raw little-endian float32 with a 16-byte header


def save_probmap(probs: np.ndarray, path) -> None:
    imgcore.validate_probmap(probs)
    h, w, k = probs.shape
    with open(path, "wb") as fh:
        fh.write(PMAP_MAGIC + struct.pack("<III", h, w, k))
        fh.write(probs.astype("<f4").tobytes())


def load_probmap(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != PMAP_MAGIC:
            raise ValueError(f"{path}: not a probability map")
        h, w, k = struct.unpack("<III", header[4:16])
        data = np.frombuffer(fh.read(4 * h * w * k), dtype="<f4")
    if data.size != h * w * k:
        raise ValueError(f"{path}: truncated probability map")
    return data.reshape(h, w, k).astype(np.float32)


# ---------------------------------------------------------------------------
# Commands


def _cmd_superpixels(args) -> int:
    img = imgcore.load_image_u8(args.input)
    sp = superpixel.compute_superpixels(img, args.algo, args.n)
    superpixel.save_superpixel_map(sp, args.output)
    print(sp.n)
    return 0


def _cmd_mix(args) -> int:
    a = imgcore.load_image_u8(args.a)
    b = imgcore.load_image_u8(args.b)
    if a.shape != b.shape:
        raise ValueError(f"input sizes differ: {a.shape} vs {b.shape}")
    cfg = mixer.MixConfig(n_superpixels=args.n, proportion=args.proportion,
                          algo=args.algo, seed=args.seed)
    rng = np.random.default_rng(cfg.seed)
    mixed, mask = mixer.make_mix(a, b, cfg, rng)
    imgcore.save_image_u8(mixed, args.out)
    if args.mask_out:
        mixer.save_mask(mask, args.mask_out)
    return 0


def _corpus_files(directory: str) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise ValueError(f"not a directory: {directory}")
    entries = sorted(p for p in root.iterdir() if p.is_file())
    if not entries:
        raise ValueError(f"empty directory: {directory}")
    return entries


def _cmd_eval(args) -> int:
    preds = _corpus_files(args.pred)
    gts = _corpus_files(args.gt)
    if [p.name for p in preds] != [p.name for p in gts]:
        raise ValueError("pred and gt directories must hold matching filenames")

    cm = np.zeros((args.classes, args.classes), dtype=np.int64)
    for pred_path, gt_path in zip(preds, gts):
        cm += metrics.confusion(imgcore.load_label_map(pred_path),
                                imgcore.load_label_map(gt_path), args.classes)
    report = {"miou": metrics.miou(cm)}

    if args.probs:
        prob_files = _corpus_files(args.probs)
        gt_by_name = {p.name: p for p in gts}
        nll_sum = 0.0
        nll_n = 0
        prob_chunks = []
        gt_chunks = []
        for prob_path in prob_files:
            gt_path = gt_by_name.get(prob_path.stem + ".png") \
                or gt_by_name.get(prob_path.name)
            if gt_path is None:
                raise ValueError(f"no ground truth for {prob_path.name}")
            probs = load_probmap(prob_path)
            gt = imgcore.load_label_map(gt_path)
            scored = int(np.count_nonzero(gt != imgcore.IGNORE_LABEL))
            nll_sum += metrics.nll(probs, gt) * scored
            nll_n += scored
            prob_chunks.append(probs.reshape(-1, probs.shape[-1]))
            gt_chunks.append(gt.reshape(-1))
        all_probs = np.concatenate(prob_chunks)[None, :, :]
        all_gt = np.concatenate(gt_chunks)[None, :]
        report["ece"] = metrics.ece(all_probs, all_gt, args.bins)
        report["nll"] = nll_sum / nll_n

    print(metrics.format_report(report))
    return 0


def _cmd_ood_eval(args) -> int:
    prob_files = _corpus_files(args.probs)
    mask_files = _corpus_files(args.ood_mask)
    if [p.stem for p in prob_files] != [p.stem for p in mask_files]:
        raise ValueError("probs and ood-mask directories must hold matching names")

    scores = []
    flags = []
    for prob_path, mask_path in zip(prob_files, mask_files):
        probs = load_probmap(prob_path)
        ood = mixer.load_mask(mask_path)
        if ood.shape != probs.shape[:2]:
            raise ValueError(f"{mask_path.name}: mask shape {ood.shape} does not "
                             f"match probs {probs.shape[:2]}")
        scores.append(1.0 - metrics.mcp_confidence(probs).reshape(-1))
        flags.append(ood.reshape(-1).astype(bool))
    samples = metrics.ScoredSamples(np.concatenate(scores), np.concatenate(flags))
    print(metrics.format_report({
        "auc": metrics.roc_auc(samples),
        "aupr": metrics.aupr(samples),
        "fpr95": metrics.fpr_at_95_tpr(samples),
    }))
    return 0


def _load_config_document(path: str) -> dict:
    raw = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode())
    return json.loads(raw.decode())


def _split_config(doc: dict) -> tuple[consistency.SynthTask, consistency.TrainerConfig]:
    doc = dict(doc)
    if "lambda" in doc:
        doc["lam"] = doc.pop("lambda")

    mix_keys = {f.name for f in fields(mixer.MixConfig)}
    task_keys = {f.name for f in fields(consistency.SynthTask)}
    trainer_keys = {f.name for f in fields(consistency.TrainerConfig)} - {"mix", "crop"}

    mix_kwargs = {}
    task_kwargs = {}
    trainer_kwargs = {}
    for key, value in doc.items():
        if key.startswith("task_"):
            task_kwargs[key[len("task_"):]] = value
        elif key in mix_keys and key != "seed":
            mix_kwargs[key] = value
        elif key in trainer_keys:
            trainer_kwargs[key] = value
        elif key in task_keys:
            task_kwargs[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    cfg = consistency.TrainerConfig(mix=mixer.MixConfig(**mix_kwargs), **trainer_kwargs)
    return consistency.SynthTask(**task_kwargs), cfg


def _cmd_train_toy(args) -> int:
    task, cfg = _split_config(_load_config_document(args.config))
    result = consistency.train(task, cfg)
    consistency.save_checkpoint(result.student, args.checkpoint)
    if args.teacher_checkpoint:
        consistency.save_checkpoint(result.teacher, args.teacher_checkpoint)
    if args.history:
        consistency.write_history_csv(result.history, args.history)
    test_metrics = {}
    if task.n_test > 0:
        test_metrics = consistency.evaluate(result.student, task.test_set(),
                                            task.classes)
    print(metrics.format_report(test_metrics))
    return 0


def _cmd_verify_bound(args) -> int:
    reports = bound.run_verification(args.instances, args.seed)
    for i, report in enumerate(reports):
        print(json.dumps({"instance": i, **report.to_dict()}))
    passed = sum(r.holds for r in reports)
    print(json.dumps({"total": len(reports), "passed": passed,
                      "all_hold": passed == len(reports)}))
    return 0 if passed == len(reports) else 1


def _cmd_gen_synth(args) -> int:
    task = consistency.SynthTask(
        classes=args.classes, height=args.height, width=args.width,
        n_labeled=args.count, n_unlabeled=0, n_test=0,
        noise_sigma=args.noise_sigma, seed=args.seed)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    for i, (img, lab) in enumerate(task.labeled_set()):
        imgcore.save_image_u8(img, out / "images" / f"scene_{i:04d}.png")
        imgcore.save_label_map(lab, out / "labels" / f"scene_{i:04d}.png")
    print(json.dumps({"images": args.count, "out": str(out)}))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spxmix")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("superpixels", help="segment an image into superpixels")
    p.add_argument("--input", required=True)
    p.add_argument("--algo", choices=("watershed", "slic"), default="watershed")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_superpixels)

    p = sub.add_parser("mix", help="superpixel-mix two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--proportion", type=float, default=0.5)
    p.add_argument("--algo", choices=("watershed", "slic"), default="watershed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", default=None)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("eval", help="score a prediction corpus")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--probs", default=None)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--bins", type=int, default=15)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ood-eval", help="score OOD detection from probability maps")
    p.add_argument("--probs", required=True)
    p.add_argument("--ood-mask", required=True)
    p.set_defaults(func=_cmd_ood_eval)

    p = sub.add_parser("train-toy", help="train the toy consistency model")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--teacher-checkpoint", default=None)
    p.add_argument("--history", default=None)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("verify-bound", help="numerically verify the risk bound")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify_bound)

    p = sub.add_parser("gen-synth", help="write a synthetic scene corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"spxmix: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
