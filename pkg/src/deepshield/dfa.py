"""Feature-space forgery augmentation from per-channel statistics.

Two synthesis routes over a group of class embeddings (N clips x T frames
x C channels) of one fake video:

* domain bridging: renormalize the group to statistics mixed (Beta-weighted)
  with those of a fake video of a different forgery type;
* boundary expansion: scale the group's spread about its own mean by alpha.

Statistics are detached by default so gradients flow through the transforms
as constant affine maps.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .config import DfaConfig

SAM_BLEND_TAG = "sam-blend"


@dataclass
class DomainStats:
    mu: torch.Tensor       # (C,)
    sigma: torch.Tensor    # (C,), floored to a small positive value


@dataclass
class FakeFeatureGroup:
    features: torch.Tensor   # (N, T, C) class embeddings of one fake video
    domain_tag: str


@dataclass
class DfaFeatures:
    """One augmented feature set plus the draw that produced it (replayable)."""

    features: torch.Tensor   # (N, T, C), labeled fake by construction
    origin: str              # "dfg" | "bfg"
    source_index: int        # index of the source group
    partner_index: int | None = None   # pairing for the bridging route
    lam: float | None = None           # mixing weight used


def channel_stats(group: FakeFeatureGroup | torch.Tensor,
                  sigma_floor: float = 1e-5,
                  detach: bool = True) -> DomainStats:
    """Per-channel mean and population std over the N*T feature vectors."""
    feats = group.features if isinstance(group, FakeFeatureGroup) else group
    if feats.ndim != 3:
        raise ValueError(f"expected (N, T, C) features, got {tuple(feats.shape)}")
    flat = feats.reshape(-1, feats.shape[-1])
    mu = flat.mean(dim=0)
    sigma = flat.var(dim=0, unbiased=False).sqrt().clamp_min(sigma_floor)
    if detach:
        mu, sigma = mu.detach(), sigma.detach()
    return DomainStats(mu=mu, sigma=sigma)


def mix_stats(a: DomainStats, b: DomainStats, lam: float) -> DomainStats:
    if a.mu.shape != b.mu.shape:
        raise ValueError("cannot mix stats of different channel counts")
    return DomainStats(mu=lam * a.mu + (1.0 - lam) * b.mu,
                       sigma=lam * a.sigma + (1.0 - lam) * b.sigma)


def dfg_transform(features: torch.Tensor, own: DomainStats,
                  mixed: DomainStats) -> torch.Tensor:
    """Renormalize features from their own statistics to the mixed ones."""
    return mixed.sigma * ((features - own.mu) / own.sigma) + mixed.mu


def bfg_transform(features: torch.Tensor, own: DomainStats,
                  alpha: float) -> torch.Tensor:
    """Scale the spread about the group mean by alpha (>= 1)."""
    if alpha < 1.0:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    return own.mu + alpha * (features - own.mu)


def _draw_partner(tags: list[str], index: int, rng: np.random.Generator) -> int:
    other_domain = [i for i, tag in enumerate(tags)
                    if tag != tags[index]]
    if other_domain:
        return int(other_domain[rng.integers(len(other_domain))])
    warnings.warn("all fake groups share one domain tag; bridging pairs "
                  "within the tag", stacklevel=2)
    others = [i for i in range(len(tags)) if i != index]
    if not others:
        return index  # single group: degenerate self-pairing
    return int(others[rng.integers(len(others))])


def augment_fake_batch(groups: list[FakeFeatureGroup], rng: np.random.Generator,
                       cfg: DfaConfig | None = None) -> list[DfaFeatures]:
    """Emit two augmented feature sets (bridged, expanded) per input group."""
    cfg = cfg or DfaConfig()
    if not groups:
        return []
    tags = [g.domain_tag for g in groups]
    stats = [channel_stats(g, cfg.sigma_floor, detach=not cfg.stats_grad)
             for g in groups]
    out: list[DfaFeatures] = []
    for i, group in enumerate(groups):
        partner = _draw_partner(tags, i, rng)
        lam = float(rng.beta(cfg.beta_a, cfg.beta_b))
        if cfg.symmetrize_lambda:
            lam = max(lam, 1.0 - lam)
        mixed = mix_stats(stats[i], stats[partner], lam)
        out.append(DfaFeatures(
            features=dfg_transform(group.features, stats[i], mixed),
            origin="dfg", source_index=i, partner_index=partner, lam=lam))
        out.append(DfaFeatures(
            features=bfg_transform(group.features, stats[i], cfg.alpha),
            origin="bfg", source_index=i))
    return out


def replay_augmentation(groups: list[FakeFeatureGroup], plan: list[DfaFeatures],
                        cfg: DfaConfig | None = None) -> list[DfaFeatures]:
    """Recompute augmented features from fresh groups using a recorded plan."""
    cfg = cfg or DfaConfig()
    stats = [channel_stats(g, cfg.sigma_floor, detach=not cfg.stats_grad)
             for g in groups]
    out = []
    for item in plan:
        own = stats[item.source_index]
        features = groups[item.source_index].features
        if item.origin == "dfg":
            mixed = mix_stats(own, stats[item.partner_index], item.lam)
            new = dfg_transform(features, own, mixed)
        else:
            new = bfg_transform(features, own, cfg.alpha)
        out.append(DfaFeatures(features=new, origin=item.origin,
                               source_index=item.source_index,
                               partner_index=item.partner_index, lam=item.lam))
    return out
