"""Procedural face-video generator for offline, license-free runs.

Videos are textured ellipse heads (eyes + mouth) that translate and rotate
smoothly over a static background, with exact landmarks by construction.
Fake videos are whole-video blends of an independently rendered head, with
the per-frame masks stored next to the frames. Each fake video forces
exactly one enhancement family and records it as its manipulation tag, so
the toy dataset carries a real forgery-type vocabulary.
"""

from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .blend import EnhancementParams, blend_clip, sample_mask_params
from .config import SamConfig, SyntheticConfig
from .data import FRAMES_DIRNAME, MASKS_DIRNAME, META_FILENAME, LandmarkSet, \
    VideoClip, write_image_rgb, write_mask_gray
from .errors import DatasetError

LANDMARKS_FILENAME = "landmarks.txt"
ENHANCEMENT_FAMILIES = ("color", "brightness", "sharpness")
NUM_FACE_LANDMARKS = 12

# a stored fake must survive 8-bit quantization; resample params until the
# blended middle frame differs visibly from its source
_MIN_MEAN_DIFF = 0.015
_MAX_PARAM_TRIES = 24


def _smooth_noise(rng: np.random.Generator, size: int, cells: int,
                  channels: int) -> np.ndarray:
    coarse = rng.uniform(-1.0, 1.0, size=(cells, cells, channels)).astype(np.float32)
    return cv2.resize(coarse, (size, size), interpolation=cv2.INTER_CUBIC) \
        .reshape(size, size, channels)


def _render_background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.25, 0.5)
    gradient = np.linspace(-0.08, 0.08, size, dtype=np.float32)[:, None, None]
    bg = base + gradient + 0.06 * _smooth_noise(rng, size, 5, 3)
    return np.clip(bg, 0.0, 1.0).astype(np.float32)


def _render_canonical_face(rng: np.random.Generator, size: int,
                           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face RGB, soft alpha, and canonical landmark points (L, 2)."""
    s = size
    center = (s / 2.0, s / 2.0)
    ax, ay = 0.30 * s, 0.40 * s

    skin = np.array([0.72, 0.58, 0.48], dtype=np.float32) \
        + rng.uniform(-0.06, 0.06, 3).astype(np.float32)
    face = np.clip(skin + 0.05 * _smooth_noise(rng, s, 6, 3), 0.0, 1.0)

    def fill_ellipse(img, cx, cy, rx, ry, color):
        cv2.ellipse(img, (int(round(cx)), int(round(cy))),
                    (max(1, int(round(rx))), max(1, int(round(ry)))),
                    0, 0, 360, color, thickness=-1)

    face_u8 = (face * 255).astype(np.uint8)
    eye_color = tuple(int(255 * c) for c in
                      (0.14 + rng.uniform(0, 0.06), 0.12, 0.10))
    mouth_color = tuple(int(255 * c) for c in
                        (0.45 + rng.uniform(0, 0.1), 0.20, 0.22))
    for sx in (-1, 1):
        fill_ellipse(face_u8, center[0] + sx * 0.13 * s, center[1] - 0.13 * s,
                     0.065 * s, 0.04 * s, eye_color)
    fill_ellipse(face_u8, center[0], center[1] + 0.20 * s,
                 0.11 * s, 0.04 * s, mouth_color)
    face = face_u8.astype(np.float32) / 255.0

    ys, xs = np.mgrid[0:s, 0:s].astype(np.float32)
    ellipse = (((xs - center[0]) / ax) ** 2 + ((ys - center[1]) / ay) ** 2) <= 1.0
    alpha = cv2.GaussianBlur(ellipse.astype(np.float32), (0, 0), 1.0)

    angles = np.linspace(0.0, 2.0 * np.pi, NUM_FACE_LANDMARKS, endpoint=False)
    landmarks = np.stack([center[0] + ax * np.cos(angles),
                          center[1] + ay * np.sin(angles)], axis=1)
    return face, alpha, landmarks.astype(np.float32)


def _motion_tracks(rng: np.random.Generator, num_frames: int, size: int,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-frame (dx, dy, angle_deg), smooth sinusoids with random phase."""
    t = np.arange(num_frames, dtype=np.float64)
    scale = size / 64.0

    def track(amplitude_range):
        amp = rng.uniform(*amplitude_range)
        period = rng.uniform(18, 45)
        phase = rng.uniform(0, 2 * np.pi)
        return amp * np.sin(2 * np.pi * t / period + phase)

    dx = track((1.5, 3.5)) * scale
    dy = track((1.5, 3.5)) * scale
    angle = track((2.0, 6.0))
    return dx, dy, angle


def _render_video(rng: np.random.Generator, num_frames: int, size: int,
                  ) -> tuple[np.ndarray, np.ndarray]:
    """All frames (T, S, S, 3) and landmarks (T, L, 2) of one head video."""
    background = _render_background(rng, size)
    face, alpha, canonical = _render_canonical_face(rng, size)
    dx, dy, angle = _motion_tracks(rng, num_frames, size)
    center = (size / 2.0, size / 2.0)

    frames, landmarks = [], []
    ones = np.ones((len(canonical), 1), dtype=np.float32)
    homogeneous = np.concatenate([canonical, ones], axis=1)
    for i in range(num_frames):
        matrix = cv2.getRotationMatrix2D(center, float(angle[i]), 1.0)
        matrix[:, 2] += (dx[i], dy[i])
        warped = cv2.warpAffine(face, matrix, (size, size),
                                flags=cv2.INTER_LINEAR,
                                borderMode=cv2.BORDER_CONSTANT)
        walpha = cv2.warpAffine(alpha, matrix, (size, size),
                                flags=cv2.INTER_LINEAR,
                                borderMode=cv2.BORDER_CONSTANT)[..., None]
        frames.append(np.clip(walpha * warped + (1 - walpha) * background, 0, 1))
        points = homogeneous @ matrix.astype(np.float32).T
        landmarks.append(np.clip(points, 1.0, size - 2.0))
    return np.stack(frames).astype(np.float32), np.stack(landmarks)


def _family_params(rng: np.random.Generator, cfg: SamConfig,
                   family: str) -> EnhancementParams:
    color = np.zeros(3, dtype=np.float32)
    brightness, sharpness = 1.0, 0.0
    if family == "color":
        color = rng.uniform(-cfg.color_shift, cfg.color_shift, 3)
    elif family == "brightness":
        brightness = float(rng.uniform(cfg.brightness[0], cfg.brightness[1]))
    elif family == "sharpness":
        sharpness = float(rng.uniform(cfg.sharpness[0], cfg.sharpness[1]))
    else:
        raise ValueError(f"unknown enhancement family {family!r}")
    return EnhancementParams(
        target="inner" if rng.random() < 0.5 else "outer",
        color_shift=color, brightness_factor=brightness,
        sharpness_amount=sharpness,
        jitter=cfg.jitter if cfg.jitter_enabled else 0.0)


def _visible_blend_params(rng: np.random.Generator, cfg: SamConfig,
                          family: str, frames: np.ndarray,
                          landmarks: list[LandmarkSet]):
    """Draw (enhancement, mask) params whose blend clears the 8-bit floor."""
    mid = len(frames) // 2
    probe = VideoClip(frames=frames[mid:mid + 1], source_id="probe", start_index=0)
    for _ in range(_MAX_PARAM_TRIES):
        enh = _family_params(rng, cfg, family)
        mask_params = sample_mask_params(rng, cfg, frames.shape[1:3])
        blended, mask = blend_clip(probe, [landmarks[mid]], enh, mask_params,
                                   np.random.default_rng(0))
        support = mask.values[0] > 0
        if not support.any():
            continue
        diff = np.abs(blended.frames[0] - frames[mid]).max(axis=-1)[support]
        if diff.mean() >= _MIN_MEAN_DIFF:
            return enh, mask_params
    return enh, mask_params  # give up gracefully; last draw still valid


def _write_video(video_dir: Path, frames: np.ndarray, landmarks: np.ndarray,
                 label: str, manipulation: str | None = None,
                 masks: np.ndarray | None = None) -> None:
    frames_dir = video_dir / FRAMES_DIRNAME
    frames_dir.mkdir(parents=True)
    for i, frame in enumerate(frames):
        write_image_rgb(frames_dir / f"{i:06d}.png", frame)
    if masks is not None:
        masks_dir = video_dir / MASKS_DIRNAME
        masks_dir.mkdir()
        for i, mask in enumerate(masks):
            write_mask_gray(masks_dir / f"{i:06d}.png", mask)
    lines = [" ".join(f"{v:.4f}" for v in pts.reshape(-1)) for pts in landmarks]
    (video_dir / LANDMARKS_FILENAME).write_text("\n".join(lines) + "\n")
    size = frames.shape[2]
    meta = {
        "label": label,
        "face_box": [[0, 0, size, size]] * len(frames),
        "landmarks": LANDMARKS_FILENAME,
    }
    if manipulation:
        meta["manipulation"] = manipulation
    (video_dir / META_FILENAME).write_text(json.dumps(meta, indent=2))


def generate_synthetic_dataset(cfg: SyntheticConfig, out_dir: str | Path,
                               seed: int, sam_cfg: SamConfig | None = None,
                               force: bool = False) -> Path:
    """Write a loadable synthetic dataset; bit-identical for a fixed seed."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise DatasetError(f"output directory {out_dir} exists; "
                               f"pass force=True (--force) to overwrite")
        for child in sorted(out_dir.iterdir(), reverse=True):
            if child.is_dir():
                import shutil
                shutil.rmtree(child)
            else:
                child.unlink()
    out_dir.mkdir(parents=True, exist_ok=True)
    sam_cfg = sam_cfg or SamConfig()

    master = np.random.default_rng(seed)
    streams = master.spawn(cfg.num_real + cfg.num_fake)

    for i in range(cfg.num_real):
        rng = streams[i]
        frames, landmarks = _render_video(rng, cfg.frames_per_video, cfg.image_size)
        _write_video(out_dir / f"real_{i:03d}", frames, landmarks, "real")

    for i in range(cfg.num_fake):
        rng = streams[cfg.num_real + i]
        frames, landmarks = _render_video(rng, cfg.frames_per_video, cfg.image_size)
        landmark_sets = [LandmarkSet(p) for p in landmarks]
        family = ENHANCEMENT_FAMILIES[i % len(ENHANCEMENT_FAMILIES)]
        enh, mask_params = _visible_blend_params(rng, sam_cfg, family, frames,
                                                 landmark_sets)
        source = VideoClip(frames=frames, source_id=f"fake_{i:03d}",
                           start_index=0)
        blended, masks = blend_clip(source, landmark_sets, enh, mask_params, rng)
        _write_video(out_dir / f"fake_{i:03d}", blended.frames, landmarks,
                     "fake", manipulation=f"blend-{family}",
                     masks=masks.values)
    return out_dir
