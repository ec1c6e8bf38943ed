"""Inference protocol, video-level AUC, and patch-probability heatmaps."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch
from matplotlib import colormaps
from scipy.stats import rankdata

from .data import FrameCache, VideoClip, VideoRecord, sample_inference_clips, \
    write_image_rgb
from .losses import global_clip_feature
from .model import DeepfakeDetector


@dataclass
class VideoPrediction:
    video_id: str
    clip_probs: list[float]   # one fake probability per inference clip
    video_prob: float         # mean of clip_probs
    label: str                # "real" | "fake"


@torch.no_grad()
def clip_fake_prob(model: DeepfakeDetector, clips: list[VideoClip]) -> list[float]:
    """Fake probability of each clip from the global-feature head."""
    model.eval()
    features = model.encode_frames_batch([c.frames for c in clips])
    globals_ = torch.stack([global_clip_feature(f.class_embeddings)
                            for f in features])
    return [float(p) for p in model.classify(globals_, head="clip")]


def predict_video(model: DeepfakeDetector, record: VideoRecord,
                  cache: FrameCache | None = None) -> VideoPrediction:
    """Average the fake probabilities of the 4 deterministic inference clips."""
    clips = sample_inference_clips(record, model.cfg.num_frames, cache)
    probs = clip_fake_prob(model, clips)
    return VideoPrediction(video_id=record.video_id, clip_probs=probs,
                           video_prob=float(np.mean(probs)), label=record.label)


def rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """ROC AUC via the rank statistic; ties get 0.5 credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2)
                 / (n_pos * n_neg))


def video_auc(predictions: list[VideoPrediction]) -> float:
    scores = np.array([p.video_prob for p in predictions])
    labels = np.array([1 if p.label == "fake" else 0 for p in predictions])
    return rank_auc(scores, labels)


def evaluate_dataset(model: DeepfakeDetector, records: list[VideoRecord],
                     cache: FrameCache | None = None) -> dict:
    """Metrics for a whole dataset (the `eval` subcommand's JSON payload)."""
    predictions = [predict_video(model, r, cache) for r in records]
    return {
        "auc": video_auc(predictions),
        "n_videos": len(predictions),
        "per_video": [{"video_id": p.video_id, "video_prob": p.video_prob,
                       "label": p.label} for p in predictions],
    }


@torch.no_grad()
def clip_patch_probs(model: DeepfakeDetector, clip: VideoClip) -> np.ndarray:
    """Per-patch fake probabilities, (T, P) float64."""
    model.eval()
    features = model.encode_clip(clip)
    probs = model.classify(features.patch_embeddings, head="patch")
    return probs.double().cpu().numpy()


def emit_patch_heatmap(model: DeepfakeDetector, clip: VideoClip,
                       out_dir: str | Path, colormap: str = "jet",
                       alpha: float = 0.5) -> list[Path]:
    """Write one overlay PNG per frame plus a sidecar JSON of raw probabilities."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    probs = clip_patch_probs(model, clip)
    side = model.cfg.grid_size
    cmap = colormaps[colormap]
    height, width = clip.frame_shape

    paths = []
    for t in range(clip.num_frames):
        grid = probs[t].reshape(side, side).astype(np.float32)
        heat = cv2.resize(grid, (width, height), interpolation=cv2.INTER_LINEAR)
        colors = cmap(heat)[..., :3].astype(np.float32)
        overlay = (1.0 - alpha) * clip.frames[t] + alpha * colors
        path = out_dir / f"heatmap_{t:03d}.png"
        write_image_rgb(path, overlay)
        paths.append(path)

    sidecar = out_dir / "patch_probs.json"
    sidecar.write_text(json.dumps({
        "source_id": clip.source_id,
        "start_index": clip.start_index,
        "grid": [side, side],
        "probs": probs.tolist(),
    }, indent=2))
    paths.append(sidecar)
    return paths
