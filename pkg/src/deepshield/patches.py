"""Patch-level labels from blend masks and the patch-wise BCE loss.

Frames are divided into P non-overlapping square patches aligned with the
encoder's token grid; a patch is labeled fake when it contains at least
``theta`` manipulated (strictly positive) mask pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .data import BlendMask


@dataclass
class PatchLabelGrid:
    labels: np.ndarray   # (T, P) int8 in {0, 1}, row-major over the frame grid
    theta: int


@dataclass
class PatchProbGrid:
    probs: torch.Tensor  # (T, P) in [0, 1]


def patch_mask_score(patch_mask: np.ndarray) -> int:
    """Count of manipulated pixels: strictly positive mask entries."""
    return int(np.count_nonzero(np.asarray(patch_mask) > 0))


def _patch_grid_side(height: int, width: int, num_patches: int) -> int:
    side = int(round(num_patches ** 0.5))
    if side * side != num_patches:
        raise ValueError(f"num_patches must be a perfect square, got {num_patches}")
    if height % side != 0 or width % side != 0:
        raise ValueError(
            f"frame size {height}x{width} not divisible into {side}x{side} patches")
    return side


def patch_labels(mask: BlendMask | np.ndarray, num_patches: int,
                 theta: int) -> PatchLabelGrid:
    """Label each of the T x P patches by thresholded manipulated-pixel count."""
    values = mask.values if isinstance(mask, BlendMask) else np.asarray(mask)
    if values.ndim != 3:
        raise ValueError(f"mask must be (T, H, W), got shape {values.shape}")
    t, height, width = values.shape
    side = _patch_grid_side(height, width, num_patches)
    ph, pw = height // side, width // side
    blocks = values.reshape(t, side, ph, side, pw)
    counts = (blocks > 0).sum(axis=(2, 4))          # (T, side, side)
    labels = (counts >= theta).astype(np.int8).reshape(t, num_patches)
    return PatchLabelGrid(labels=labels, theta=theta)


def lpg_loss(probs: torch.Tensor, labels: torch.Tensor,
             eps: float = 1e-7) -> torch.Tensor:
    """Mean binary cross-entropy over all patches of all frames."""
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs labels "
                         f"{tuple(labels.shape)}")
    y = labels.to(probs.dtype)
    p = probs.clamp(eps, 1.0 - eps)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()
