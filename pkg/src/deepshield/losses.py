"""Global feature construction and the training objective.

The overall objective is omega * patch_loss + (cls_loss + upsilon * supcon),
where the patch loss covers real and freshly blended clips only and the
global terms cover the whole batch including augmented features.
"""

from __future__ import annotations

import logging
import warnings

import torch
import torch.nn.functional as F

from .config import LossConfig

logger = logging.getLogger(__name__)

_denominator_note_emitted = False


def global_clip_feature(class_embeddings: torch.Tensor) -> torch.Tensor:
    """Average the per-frame class embeddings: (..., T, C) -> (..., C)."""
    if class_embeddings.ndim < 2:
        raise ValueError("class embeddings must be at least (T, C)")
    return class_embeddings.mean(dim=-2)


def cls_loss(probs: torch.Tensor, labels: torch.Tensor,
             eps: float = 1e-7) -> torch.Tensor:
    """Mean binary cross-entropy over fake-class probabilities."""
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: probs {tuple(probs.shape)} vs labels "
                         f"{tuple(labels.shape)}")
    y = labels.to(probs.dtype)
    p = probs.clamp(eps, 1.0 - eps)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def _supcon_from_sim(sim: torch.Tensor, labels: torch.Tensor,
                     denominator: str) -> torch.Tensor:
    """Contrastive loss from a precomputed (B, B) similarity/temperature grid."""
    b = sim.shape[0]
    eye = torch.eye(b, dtype=torch.bool, device=sim.device)
    positives = (labels[:, None] == labels[None, :]) & ~eye
    counts = positives.sum(dim=1)
    if (counts == 0).any():
        warnings.warn("contrastive anchor with no positives was skipped",
                      stacklevel=3)
    if denominator == "positives":
        den_mask = positives
    elif denominator == "all":
        den_mask = ~eye
    else:
        raise ValueError(f"denominator must be 'positives' or 'all', "
                         f"got {denominator!r}")
    neg_inf = torch.tensor(float("-inf"), dtype=sim.dtype, device=sim.device)
    den = torch.logsumexp(torch.where(den_mask, sim, neg_inf), dim=1)
    log_ratio = sim - den[:, None]
    zero = torch.zeros((), dtype=sim.dtype, device=sim.device)
    per_anchor = torch.where(positives, log_ratio, zero).sum(dim=1)
    per_anchor = per_anchor / counts.clamp(min=1)
    # skipped (singleton) anchors contribute 0 while the 1/B stays as printed
    per_anchor = torch.where(counts > 0, per_anchor, zero)
    return -per_anchor.sum() / b


def supcon_loss(features: torch.Tensor, labels: torch.Tensor,
                tau: float = 0.07, denominator: str = "positives",
                normalize: bool = True) -> torch.Tensor:
    """Supervised contrastive loss over global clip features.

    For each anchor, the per-positive log ratios are averaged; the
    denominator sums over the anchor's positives ("positives", the literal
    formulation) or over every other sample ("all", the standard one).
    """
    global _denominator_note_emitted
    if features.ndim != 2:
        raise ValueError(f"features must be (B, C), got {tuple(features.shape)}")
    b = features.shape[0]
    if b < 2:
        raise ValueError("contrastive loss needs at least 2 samples")
    if labels.shape != (b,):
        raise ValueError(f"labels must be ({b},), got {tuple(labels.shape)}")
    if denominator == "positives" and not _denominator_note_emitted:
        logger.info("contrastive denominator sums over positives only; set "
                    "supcon_denominator='all' for the standard formulation")
        _denominator_note_emitted = True
    f = F.normalize(features, dim=1) if normalize else features
    sim = (f @ f.T) / tau
    return _supcon_from_sim(sim, labels, denominator)


def gfd_loss(probs: torch.Tensor, labels: torch.Tensor, features: torch.Tensor,
             cfg: LossConfig) -> torch.Tensor:
    """Global objective: cross-entropy + upsilon * contrastive."""
    ce = cls_loss(probs, labels, cfg.eps)
    sc = supcon_loss(features, labels, cfg.tau, cfg.supcon_denominator,
                     cfg.supcon_normalize)
    return ce + cfg.upsilon * sc


def overall_loss(lpg: torch.Tensor, gfd: torch.Tensor,
                 cfg: LossConfig) -> torch.Tensor:
    """omega * patch loss + global loss."""
    return cfg.omega * lpg + gfd
