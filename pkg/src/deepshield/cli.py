"""Command-line entry points: generate | blend | train | eval | viz.

Any unrecognized ``--section.key value`` pair is treated as a config
override, e.g. ``--losses.upsilon 1.0``. On failure the last stderr line is
a machine-readable JSON object and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluate, synthetic, trainer
from .blend import sample_enhancement_params, sample_mask_params, blend_clip
from .config import Config, parse_config, save_config
from .data import VideoClip, load_clip, load_dataset, sample_inference_clips
from .errors import DatasetError, DeepShieldError
from .model import DeepfakeDetector
from .synthetic import _write_video  # shared dataset writer

logger = logging.getLogger(__name__)


def _collect_overrides(extras: list[str]) -> list[str]:
    overrides = []
    i = 0
    while i < len(extras):
        token = extras[i]
        if not (token.startswith("--") and "." in token):
            raise SystemExit(f"unrecognized argument: {token}")
        if i + 1 >= len(extras):
            raise SystemExit(f"override {token} is missing a value")
        overrides.append(f"{token[2:]}={extras[i + 1]}")
        i += 2
    return overrides


def _load_config(args, extras: list[str]) -> Config:
    cfg = parse_config(args.config, overrides=_collect_overrides(extras))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, seed=args.seed))
    if getattr(args, "dataset", None):
        cfg = replace(cfg, dataset=replace(cfg.dataset, root=str(args.dataset)))
    return cfg


def _cmd_generate(args, extras) -> int:
    cfg = _load_config(args, extras)
    root = synthetic.generate_synthetic_dataset(
        cfg.synthetic, args.out, seed=cfg.trainer.seed, sam_cfg=cfg.sam,
        force=args.force)
    save_config(cfg, Path(args.out) / "generate_config.yaml")
    print(json.dumps({"dataset": str(root),
                      "videos": cfg.synthetic.num_real + cfg.synthetic.num_fake}))
    return 0


def _cmd_blend(args, extras) -> int:
    cfg = _load_config(args, extras)
    records = [r for r in load_dataset(args.dataset) if r.label == "real"]
    if not records:
        raise DatasetError(f"no real videos under {args.dataset}")
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.trainer.seed)
    for record in records:
        clip = load_clip(record, 0, record.num_frames)
        landmarks = record.landmarks()
        enh = sample_enhancement_params(rng, cfg.sam)
        mask_params = sample_mask_params(rng, cfg.sam, record.frame_shape)
        blended, masks = blend_clip(clip, landmarks, enh, mask_params, rng)
        points = np.stack([lm.points for lm in landmarks])
        _write_video(out_root / f"{record.video_id}_blend", blended.frames,
                     points, "fake", manipulation="sam-blend",
                     masks=masks.values)
        logger.info("blended %s", record.video_id)
    print(json.dumps({"output": str(out_root), "videos": len(records)}))
    return 0


def _cmd_train(args, extras) -> int:
    cfg = _load_config(args, extras)
    ckpt = trainer.train(cfg, args.out, resume=args.resume)
    print(json.dumps({"checkpoint": str(ckpt)}))
    return 0


def _cmd_eval(args, extras) -> int:
    _load_config(args, extras)  # validates overrides even though the
    model, _ = DeepfakeDetector.load_checkpoint(args.checkpoint)  # model pins geometry
    records = load_dataset(args.dataset)
    metrics = evaluate.evaluate_dataset(model, records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(metrics, indent=2))
    print(json.dumps({"auc": metrics["auc"], "n_videos": metrics["n_videos"],
                      "metrics": str(out)}))
    return 0


def _cmd_viz(args, extras) -> int:
    cfg = _load_config(args, extras)
    model, _ = DeepfakeDetector.load_checkpoint(args.checkpoint)
    records = {r.video_id: r for r in load_dataset(args.dataset)}
    if args.video not in records:
        raise DatasetError(f"video {args.video!r} not found under {args.dataset}")
    clips = sample_inference_clips(records[args.video], model.cfg.num_frames)
    clip: VideoClip = clips[args.clip]
    paths = evaluate.emit_patch_heatmap(model, clip, args.out,
                                        colormap=cfg.eval.heatmap_colormap,
                                        alpha=cfg.eval.heatmap_alpha)
    print(json.dumps({"files": [str(p) for p in paths]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepshield",
        description="Deepfake video detection: synthetic blending, patch "
                    "supervision, feature augmentation, training and "
                    "evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", type=Path, default=None,
                       help="YAML config file (defaults used when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override trainer.seed")
        p.add_argument("--out", type=Path, required=out_required,
                       help="output path")

    p = sub.add_parser("generate", help="write a synthetic face-video dataset")
    common(p)
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing output directory")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("blend", help="blend every real video of a dataset")
    common(p)
    p.add_argument("--dataset", type=Path, required=True, help="input dataset root")
    p.set_defaults(func=_cmd_blend)

    p = sub.add_parser("train", help="train a detector")
    common(p)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume")
    p.add_argument("--dataset", type=Path, default=None,
                   help="override dataset.root")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="video-level AUC over a dataset")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("viz", help="patch-probability heatmaps for one video")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--video", required=True, help="video id")
    p.add_argument("--clip", type=int, default=0,
                   help="inference clip index (0-3)")
    p.set_defaults(func=_cmd_viz)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return args.func(args, extras)
    except DeepShieldError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
