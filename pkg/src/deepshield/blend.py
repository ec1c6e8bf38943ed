"""Synthetic artifact blending: fake clips with manipulation masks.

A real clip is split per frame into an "inner" and "outer" version of the
same image, one of which is photometrically enhanced. The two are blended
through a soft mask built from the convex hull of the facial landmarks,
deformed and blurred. Enhancement and mask parameters are drawn once per
clip so artifacts stay consistent over time while the landmarks (and an
optional per-frame magnitude jitter) carry the frame-to-frame variation.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .config import SamConfig
from .data import BlendMask, LandmarkSet, VideoClip
from .errors import DegenerateHullError

INNER = "inner"
OUTER = "outer"


@dataclass
class EnhancementParams:
    """Photometric settings shared by every frame of one blended clip."""

    target: str                  # which version is enhanced: "inner" | "outer"
    color_shift: np.ndarray      # (3,) additive per-channel offset
    brightness_factor: float     # multiplicative gain
    sharpness_amount: float      # unsharp-mask strength
    jitter: float                # per-frame magnitude wobble scale

    def __post_init__(self):
        if self.target not in (INNER, OUTER):
            raise ValueError(f"target must be 'inner' or 'outer', got {self.target!r}")
        self.color_shift = np.asarray(self.color_shift, dtype=np.float32).reshape(3)


@dataclass
class MaskParams:
    """Mask geometry shared by every frame of one blended clip."""

    hull_indices: np.ndarray | None   # landmark subset; None = all points
    deform_field: np.ndarray | None   # (G, G, 2) control-point offsets, pixels
    blur_kernel_size: int
    blend_ratio: float
    deform_before_blur: bool = True

    def __post_init__(self):
        if self.blur_kernel_size < 1 or self.blur_kernel_size % 2 == 0:
            raise ValueError(f"blur_kernel_size must be odd and >= 1, "
                             f"got {self.blur_kernel_size}")
        if not 0.0 < self.blend_ratio <= 1.0:
            raise ValueError(f"blend_ratio must be in (0, 1], got {self.blend_ratio}")


def sample_enhancement_params(rng: np.random.Generator,
                              cfg: SamConfig) -> EnhancementParams:
    target = INNER if rng.random() < 0.5 else OUTER
    enabled = rng.random(3) < cfg.enhance_prob
    if not enabled.any():
        enabled[rng.integers(3)] = True
    color = rng.uniform(-cfg.color_shift, cfg.color_shift, size=3)
    brightness = rng.uniform(cfg.brightness[0], cfg.brightness[1])
    sharpness = rng.uniform(cfg.sharpness[0], cfg.sharpness[1])
    return EnhancementParams(
        target=target,
        color_shift=np.where(enabled[0], color, 0.0),
        brightness_factor=float(brightness) if enabled[1] else 1.0,
        sharpness_amount=float(sharpness) if enabled[2] else 0.0,
        jitter=cfg.jitter if cfg.jitter_enabled else 0.0,
    )


def sample_mask_params(rng: np.random.Generator, cfg: SamConfig,
                       frame_shape: tuple[int, int]) -> MaskParams:
    height, width = frame_shape
    max_disp = cfg.deform_max_frac * min(height, width)
    field = rng.uniform(-max_disp, max_disp, size=(cfg.deform_grid, cfg.deform_grid, 2))
    return MaskParams(
        hull_indices=None,
        deform_field=field.astype(np.float32),
        blur_kernel_size=int(rng.choice(cfg.blur_kernels)),
        blend_ratio=float(rng.choice(cfg.blend_ratios)),
        deform_before_blur=cfg.deform_before_blur,
    )


def _rasterize_convex_hull(points: np.ndarray,
                           frame_shape: tuple[int, int]) -> np.ndarray:
    """Binary indicator of the convex hull evaluated at pixel centers."""
    height, width = frame_shape
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise DegenerateHullError(f"cannot build a convex hull: {exc}") from exc
    verts = points[hull.vertices]  # counterclockwise in (x, y) coordinates
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    inside = np.ones((height, width), dtype=bool)
    for i in range(len(verts)):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % len(verts)]
        # keep the half-plane left of edge a->b (hull interior)
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside.astype(np.float32)


def _apply_deform(mask: np.ndarray, field: np.ndarray,
                  interpolation: int) -> np.ndarray:
    height, width = mask.shape
    disp = cv2.resize(field, (width, height), interpolation=cv2.INTER_LINEAR)
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float32),
                         np.arange(height, dtype=np.float32))
    return cv2.remap(mask, xs + disp[..., 0], ys + disp[..., 1], interpolation,
                     borderMode=cv2.BORDER_CONSTANT, borderValue=0.0)


def make_blend_mask(landmarks: LandmarkSet, params: MaskParams,
                    frame_shape: tuple[int, int]) -> np.ndarray:
    """Soft (H, W) mask in [0, 1]; peaks at ``blend_ratio`` in the hull core."""
    points = landmarks.points
    if params.hull_indices is not None:
        points = points[params.hull_indices]
    mask = _rasterize_convex_hull(points.astype(np.float64), frame_shape)

    k = params.blur_kernel_size
    steps = ["deform", "blur"] if params.deform_before_blur else ["blur", "deform"]
    soft = False
    for step in steps:
        if step == "deform" and params.deform_field is not None \
                and np.any(params.deform_field):
            interp = cv2.INTER_LINEAR if soft else cv2.INTER_NEAREST
            mask = _apply_deform(mask, params.deform_field, interp)
        elif step == "blur" and k > 1:
            mask = cv2.blur(mask, (k, k))
            soft = True
    return np.clip(mask * params.blend_ratio, 0.0, 1.0).astype(np.float32)


def enhance_frame(frame: np.ndarray, params: EnhancementParams,
                  magnitude_scale: float = 1.0) -> np.ndarray:
    """Apply the enabled enhancements, scaled by ``magnitude_scale``."""
    out = frame.astype(np.float32, copy=True)
    if np.any(params.color_shift):
        out += params.color_shift * magnitude_scale
    gain = 1.0 + (params.brightness_factor - 1.0) * magnitude_scale
    if gain != 1.0:
        out *= gain
    amount = params.sharpness_amount * magnitude_scale
    if amount > 0.0:
        out += amount * (out - cv2.GaussianBlur(out, (0, 0), 1.0))
    return np.clip(out, 0.0, 1.0)


def spatial_artifact_generate(frame: np.ndarray, landmarks: LandmarkSet,
                              mask_params: MaskParams,
                              enh_params: EnhancementParams,
                              magnitude_scale: float = 1.0,
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Blend one frame: mask * inner + (1 - mask) * outer.

    Exactly one of inner/outer is the enhanced version of ``frame`` (per
    ``enh_params.target``); the other is the untouched source, so pixels
    where the mask is 0 are bit-identical to it.
    """
    mask = make_blend_mask(landmarks, mask_params, frame.shape[:2])
    enhanced = enhance_frame(frame, enh_params, magnitude_scale)
    if enh_params.target == INNER:
        inner, outer = enhanced, frame
    else:
        inner, outer = frame, enhanced
    m = mask[..., None]
    blended = m * inner + (1.0 - m) * outer
    return blended.astype(np.float32), mask


def blend_clip(clip: VideoClip, landmarks_seq: list[LandmarkSet],
               enh_params: EnhancementParams, mask_params: MaskParams,
               rng: np.random.Generator) -> tuple[VideoClip, BlendMask]:
    """Apply one (enhancement, mask) parameter draw to every frame."""
    if len(landmarks_seq) != clip.num_frames:
        raise ValueError(
            f"landmark-count mismatch: {len(landmarks_seq)} landmark sets for "
            f"{clip.num_frames} frames")
    n_points = len(landmarks_seq[0].points)
    if any(len(lm.points) != n_points for lm in landmarks_seq):
        raise ValueError("landmark-count mismatch: point count varies over frames")

    frames, masks = [], []
    for t in range(clip.num_frames):
        scale = 1.0
        if enh_params.jitter > 0:
            scale = 1.0 + rng.uniform(-enh_params.jitter, enh_params.jitter)
        blended, mask = spatial_artifact_generate(
            clip.frames[t], landmarks_seq[t], mask_params, enh_params, scale)
        frames.append(blended)
        masks.append(mask)
    blended_clip = VideoClip(frames=np.stack(frames),
                             source_id=f"{clip.source_id}:blend",
                             start_index=clip.start_index)
    return blended_clip, BlendMask(np.stack(masks))


def temporal_artifact_generate(clip: VideoClip, landmarks_seq: list[LandmarkSet],
                               rng: np.random.Generator, cfg: SamConfig,
                               params_out: list | None = None,
                               ) -> tuple[VideoClip, BlendMask]:
    """Blend a whole clip with parameters sampled once.

    ``params_out``, when given, receives the (EnhancementParams, MaskParams)
    pair actually used — an instrumentation hook for consistency checks.
    """
    enh = sample_enhancement_params(rng, cfg)
    mask_params = sample_mask_params(rng, cfg, clip.frame_shape)
    if params_out is not None:
        params_out.append((enh, mask_params))
    return blend_clip(clip, landmarks_seq, enh, mask_params, rng)
