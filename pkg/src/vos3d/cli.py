"""Command-line entry point: train, infer, eval, bench, bench-kernels, synth-preview.

Failures exit with status 2 and one stderr line ``vos3d-error: <Kind>: <message>``.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np
import torch

from . import datasets
from .bench import bench_kernels, bench_runtime
from .config import RunConfig, parse_config, write_config
from .core import NormalizationStats, VideoTensor, normalize_clip
from .errors import ConfigError, DatasetError, Vos3dError
from .metrics import evaluate_davis, evaluate_saliency
from .network import build_model
from .pipeline import ClipScheduleConfig, segment_video
from .synth import SynthConfig, synthesize_clip
from .train import ImageInstanceDataset, VideoSequenceDataset, load_checkpoint, train_stage

log = logging.getLogger("vos3d")
ERROR_PREFIX = "vos3d-error"


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def _write_ini(path: Path, sections: dict) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name, items in sections.items():
        parser[name] = {k: str(v) for k, v in items.items()}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)


# -- train --------------------------------------------------------------------


def _train_dataset(cfg: RunConfig, stage: str):
    if not cfg.data.root:
        raise ConfigError("data.root is not set")
    if stage == "images":
        if cfg.data.layout != "image-instances":
            raise ConfigError(f"images stage needs data.layout = image-instances, got {cfg.data.layout}")
        items = [(img, masks) for _, img, masks in datasets.read_image_instances(cfg.data.root)]
        return ImageInstanceDataset(items, SynthConfig(T_c=cfg.train.T_c), seed=cfg.train.seed)
    if cfg.data.layout != "davis":
        raise ConfigError(f"video stage needs dense annotations (data.layout = davis), got {cfg.data.layout}")
    layout = datasets.VideoLayout(cfg.data.root, split=cfg.data.split or None)
    seqs = []
    for name in layout.sequences():
        frames, stems = layout.frames(name)
        seqs.append((frames, layout.annotations(name, stems)))
    return VideoSequenceDataset(seqs)


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    overrides = {"stage": args.stage}
    if args.seed is not None:
        overrides["seed"] = args.seed
    train_cfg = dataclasses.replace(cfg.train, **overrides)
    cfg = RunConfig(cfg.model, cfg.schedule, train_cfg, cfg.data, cfg.normalization)
    _seed_everything(train_cfg.seed)
    out = Path(args.out)
    write_config(cfg, out / "config.ini")
    if args.init:
        model, _ = load_checkpoint(args.init)
        if model.config != cfg.model:
            raise ConfigError("--init checkpoint architecture differs from [model] sections")
    else:
        model = build_model(cfg.model)
    dataset = _train_dataset(cfg, args.stage)
    meta = train_stage(model, dataset, train_cfg, out_dir=out, norm=cfg.normalization)
    print(json.dumps({"checkpoint": str(out / "last"), "epochs": meta.epoch + 1, "loss": meta.metrics["loss"]}))
    return 0


# -- infer --------------------------------------------------------------------


def _input_sequences(root: Path):
    """(name, frame directory) pairs for a davis root, a dir of sequences, or one frame dir."""
    if (root / "JPEGImages").is_dir():
        layout = datasets.VideoLayout(root)
        return [(s, root / "JPEGImages" / s) for s in layout.sequences()]
    if not root.is_dir():
        raise DatasetError(f"input directory not found: {root}")
    if datasets.list_images(root):
        return [(root.name, root)]
    seqs = sorted(p for p in root.iterdir() if p.is_dir())
    if not seqs:
        raise DatasetError(f"no frames or sequence directories in {root}")
    return [(p.name, p) for p in seqs]


def cmd_infer(args) -> int:
    _seed_everything(args.seed or 0)
    model, meta = load_checkpoint(args.checkpoint)
    T_o = args.clip_length - 1 if args.dense else args.overlap
    schedule = ClipScheduleConfig(args.clip_length, T_o)
    norm = NormalizationStats(tuple(meta.normalization["mean"]), tuple(meta.normalization["std"]))
    out = Path(args.out)
    _write_ini(out / "infer_config.ini", {
        "infer": {"checkpoint": args.checkpoint, "input": args.input, "threshold": args.threshold,
                  "seed": args.seed or 0, "save_probs": args.save_probs},
        "schedule": {"T_c": schedule.T_c, "T_o": schedule.T_o},
        "normalization": {"mean": ", ".join(map(repr, norm.mean)), "std": ", ".join(map(repr, norm.std))},
    })
    summary = {}
    for name, frame_dir in _input_sequences(Path(args.input)):
        frames, stems = datasets.read_frames(frame_dir)
        clip = normalize_clip(VideoTensor(frames), norm.mean, norm.std)
        probs, masks = segment_video(model, clip, schedule, args.threshold)
        datasets.write_masks(out / name, masks.data, stems)
        if args.save_probs:
            datasets.write_probabilities(out / name, probs.data, stems)
        summary[name] = len(stems)
    print(json.dumps({"sequences": summary, "out": str(out)}))
    return 0


# -- eval ---------------------------------------------------------------------


def _load_gt(gt_root: Path):
    if (gt_root / "Annotations").is_dir():
        base = gt_root / "Annotations"
    else:
        base = gt_root
    if not base.is_dir():
        raise DatasetError(f"ground-truth directory not found: {gt_root}")
    return {p.name: datasets.read_masks(p) for p in sorted(base.iterdir()) if p.is_dir()}


def cmd_eval(args) -> int:
    preds = datasets.read_prediction_dir(args.pred)
    gts = _load_gt(Path(args.gt))
    pred_arrays, gt_arrays = {}, {}
    for name, gt_masks in gts.items():
        if name not in preds:
            continue
        masks, stems = preds[name]
        index = {s: i for i, s in enumerate(stems)}
        unknown = sorted(set(gt_masks) - set(index))
        if unknown:
            raise DatasetError(f"{name}: ground truth frames without predictions: {unknown[:5]}")
        if args.protocol == "davis":
            if len(gt_masks) != len(stems):
                raise DatasetError(f"{name}: davis protocol needs every predicted frame annotated")
            gt_arrays[name] = np.stack([gt_masks[s] for s in stems])
            pred_arrays[name] = masks
        else:
            pred = masks.astype(np.float64)
            if args.mae_probabilities:
                npys = [Path(args.pred) / name / f"{s}.npy" for s in stems]
                if all(p.is_file() for p in npys):
                    pred = np.stack([np.load(p) for p in npys]).astype(np.float64)
            gt_arrays[name] = {index[s]: m for s, m in gt_masks.items()}
            pred_arrays[name] = pred
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DatasetError(f"missing predictions for sequences: {missing}")
    if args.protocol == "davis":
        report = evaluate_davis(pred_arrays, gt_arrays, exclude_first_last=args.exclude_first_last,
                                workers=args.workers)
    else:
        report = evaluate_saliency(pred_arrays, gt_arrays, annotated_frames_only=True, beta2=args.beta2,
                                   mae_on_probabilities=args.mae_probabilities, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    _write_ini(out / "eval_config.ini", {"eval": {
        "protocol": args.protocol, "pred": args.pred, "gt": args.gt, "seed": args.seed or 0,
        "exclude_first_last": args.exclude_first_last, "beta2": args.beta2,
        "mae_probabilities": args.mae_probabilities,
    }})
    sys.stdout.write(report.to_table())
    return 0


# -- bench / synth-preview ----------------------------------------------------


def _parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--resolution must look like 854x480, got {text!r}") from None
    return h, w


def cmd_bench(args) -> int:
    _seed_everything(args.seed or 0)
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        cfg = parse_config(args.config) if args.config else RunConfig()
        model = build_model(cfg.model)
    report = bench_runtime(model, _parse_resolution(args.resolution), args.frames, args.warmup,
                           args.iterations, args.device, seed=args.seed or 0)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_bench_kernels(args) -> int:
    results = bench_kernels(args.size, repeat=args.repeat, seed=args.seed or 0)
    print(json.dumps(results, indent=2))
    return 0


def cmd_synth_preview(args) -> int:
    image = datasets.read_rgb(args.image)
    masks = [datasets.read_mask(p) for p in datasets.list_images(args.masks)]
    if not masks:
        raise DatasetError(f"no instance masks in {args.masks}")
    clip, mask = synthesize_clip(image, masks, SynthConfig(T_c=args.clip_length), np.random.default_rng(args.seed or 0))
    out = Path(args.out)
    datasets.write_frames(out / "frames", clip.data)
    datasets.write_masks(out / "masks", mask.data, [f"{i:05d}" for i in range(len(mask.data))])
    print(json.dumps({"frames": len(mask.data), "out": str(out)}))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"{ERROR_PREFIX}: Usage: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vos3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn)
        return p

    p = add("train", cmd_train, "train one stage from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", choices=("images", "video"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="checkpoint to continue from (e.g. the images stage)")

    p = add("infer", cmd_infer, "segment videos with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--clip-length", type=int, default=8)
    p.add_argument("--overlap", type=int, default=3)
    p.add_argument("--dense", action="store_true", help="overlap = clip length - 1")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--save-probs", action="store_true")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "score predicted masks against ground truth")
    p.add_argument("--protocol", choices=("davis", "saliency"), required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exclude-first-last", action="store_true")
    p.add_argument("--beta2", type=float, default=1.0)
    p.add_argument("--mae-probabilities", action="store_true")
    p.add_argument("--workers", type=int, default=1)

    p = add("bench", cmd_bench, "measure parameters and seconds per frame")
    p.add_argument("--checkpoint")
    p.add_argument("--config")
    p.add_argument("--resolution", default="854x480")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--device", default=None)

    p = add("bench-kernels", cmd_bench_kernels, "compare compiled and pure-Python kernels")
    p.add_argument("--size", type=int, default=480)
    p.add_argument("--repeat", type=int, default=5)

    p = add("synth-preview", cmd_synth_preview, "write a synthesized clip for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--clip-length", type=int, default=8)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.fn(args)
    except Vos3dError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"{ERROR_PREFIX}: {exc.kind}: {msg}", file=sys.stderr)
    except OSError as exc:
        print(f"{ERROR_PREFIX}: IO: {exc}".replace("\n", " "), file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
