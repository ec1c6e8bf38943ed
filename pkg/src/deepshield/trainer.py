"""Batch composition, the training step, and the optimization loop.

Each iteration draws ``batch_videos`` videos. A real draw contributes the
original clip(s) to the real set and a freshly blended copy to both the
blend and fake sets; a dataset-fake draw contributes itself to the fake set
and pulls a random real video in as its counterpart. Fake groups are then
augmented in feature space, two synthetic sets per group, giving the default
4 real + 4 fake + 8 augmented = 16 samples.

The patch loss sees only real and freshly blended entries (the ones with
masks); the global loss sees everything.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import losses as L
from .blend import temporal_artifact_generate
from .config import Config, default_iters_per_epoch, save_config
from .data import (BlendMask, FrameCache, VideoClip, VideoRecord, load_dataset,
                   sample_training_clips)
from .dfa import (SAM_BLEND_TAG, DfaFeatures, FakeFeatureGroup,
                  augment_fake_batch, replay_augmentation)
from .errors import BlendFailedError, ConfigError, DatasetError, DegenerateHullError, \
    NonFiniteLossError
from .model import ClipFeatures, DeepfakeDetector, build_model
from .patches import lpg_loss, patch_labels

logger = logging.getLogger(__name__)

EncodeFn = Callable[[list[np.ndarray]], list[ClipFeatures]]

LABEL_REAL = 0
LABEL_FAKE = 1


@dataclass
class BatchEntry:
    """One video's contribution to a batch: clips plus bookkeeping."""

    video_id: str
    clips: list[VideoClip]
    masks: list[BlendMask] | None    # aligned with clips; None for dataset fakes
    label: int                       # LABEL_REAL | LABEL_FAKE
    origin: str                      # "real" | "sam-blend" | "dataset-fake"
    domain_tag: str | None = None
    features: list[ClipFeatures] | None = None


@dataclass
class TrainingBatch:
    real: list[BatchEntry]
    fake: list[BatchEntry]
    blend: list[BatchEntry]          # the sam-blend subset of ``fake``
    dfa: list[DfaFeatures]

    def entries(self) -> list[BatchEntry]:
        return self.real + self.fake


@dataclass
class StepMetrics:
    loss_total: float
    loss_lpg: float
    loss_cls: float
    loss_supcon: float
    grad_norm: float


def _sample_blend_pair(record: VideoRecord, rng: np.random.Generator,
                       config: Config, cache: FrameCache | None,
                       ) -> tuple[BatchEntry, BatchEntry]:
    clips = sample_training_clips(record, config.trainer.clips_per_iteration,
                                  config.dataset.clip_len, rng, cache)
    landmarks = record.landmarks()
    blended_clips, masks = [], []
    for clip in clips:
        seq = landmarks[clip.start_index:clip.start_index + clip.num_frames]
        blended, mask = temporal_artifact_generate(clip, seq, rng, config.sam)
        blended_clips.append(blended)
        masks.append(mask)
    h, w = clips[0].frame_shape
    zero_masks = [BlendMask.zeros(c.num_frames, h, w) for c in clips]
    real_entry = BatchEntry(video_id=record.video_id, clips=clips,
                            masks=zero_masks, label=LABEL_REAL, origin="real")
    blend_entry = BatchEntry(video_id=f"{record.video_id}:blend",
                             clips=blended_clips, masks=masks, label=LABEL_FAKE,
                             origin="sam-blend", domain_tag=SAM_BLEND_TAG)
    return real_entry, blend_entry


def _sample_real_entry(record: VideoRecord, rng: np.random.Generator,
                       config: Config, cache: FrameCache | None) -> BatchEntry:
    clips = sample_training_clips(record, config.trainer.clips_per_iteration,
                                  config.dataset.clip_len, rng, cache)
    h, w = clips[0].frame_shape
    masks = [BlendMask.zeros(c.num_frames, h, w) for c in clips]
    return BatchEntry(video_id=record.video_id, clips=clips, masks=masks,
                      label=LABEL_REAL, origin="real")


def compose_batch(records: Sequence[VideoRecord], rng: np.random.Generator,
                  config: Config, encode_fn: EncodeFn,
                  cache: FrameCache | None = None) -> TrainingBatch:
    """Draw one training batch and encode it (see module docstring)."""
    reals = [r for r in records if r.label == "real"]
    fakes = [r for r in records if r.label == "fake"]
    if not reals:
        raise DatasetError("training dataset contains no real videos")

    real_entries: list[BatchEntry] = []
    fake_entries: list[BatchEntry] = []
    blend_entries: list[BatchEntry] = []
    for _ in range(config.trainer.batch_videos):
        use_blend = not fakes or rng.random() < config.trainer.p_blend_fake
        if use_blend:
            for _attempt in range(config.trainer.max_blend_retries):
                record = reals[rng.integers(len(reals))]
                try:
                    real_entry, blend_entry = _sample_blend_pair(
                        record, rng, config, cache)
                    break
                except DegenerateHullError as exc:
                    logger.warning("blending %s failed (%s); retrying with "
                                   "another real video", record.video_id, exc)
            else:
                raise BlendFailedError(
                    f"blending failed {config.trainer.max_blend_retries} times")
            real_entries.append(real_entry)
            fake_entries.append(blend_entry)
            blend_entries.append(blend_entry)
        else:
            record = fakes[rng.integers(len(fakes))]
            clips = sample_training_clips(
                record, config.trainer.clips_per_iteration,
                config.dataset.clip_len, rng, cache)
            fake_entries.append(BatchEntry(
                video_id=record.video_id, clips=clips, masks=None,
                label=LABEL_FAKE, origin="dataset-fake",
                domain_tag=record.manipulation or "fake"))
            paired = reals[rng.integers(len(reals))]
            real_entries.append(_sample_real_entry(paired, rng, config, cache))

    batch = TrainingBatch(real=real_entries, fake=fake_entries,
                          blend=blend_entries, dfa=[])
    _encode_entries(batch, encode_fn)
    batch.dfa = augment_fake_batch(_fake_groups(batch), rng, config.dfa)
    return batch


def _encode_entries(batch: TrainingBatch, encode_fn: EncodeFn) -> None:
    entries = batch.entries()
    arrays = [clip.frames for entry in entries for clip in entry.clips]
    features = encode_fn(arrays)
    pos = 0
    for entry in entries:
        entry.features = features[pos:pos + len(entry.clips)]
        pos += len(entry.clips)


def _fake_groups(batch: TrainingBatch) -> list[FakeFeatureGroup]:
    return [FakeFeatureGroup(
        features=torch.stack([f.class_embeddings for f in entry.features]),
        domain_tag=entry.domain_tag or "fake") for entry in batch.fake]


def recompute_batch_features(batch: TrainingBatch, encode_fn: EncodeFn) -> None:
    """Re-encode all clips and replay the recorded augmentation plan in place."""
    _encode_entries(batch, encode_fn)
    batch.dfa = replay_augmentation(_fake_groups(batch), batch.dfa)


def batch_losses(model: DeepfakeDetector, batch: TrainingBatch, config: Config,
                 ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Assemble the overall loss from an encoded batch."""
    lcfg = config.losses

    # patch supervision: real + freshly blended entries only
    prob_rows, label_rows = [], []
    num_patches = config.encoder.num_patches
    for entry in batch.real + batch.blend:
        for clip_features, mask in zip(entry.features, entry.masks):
            probs = model.classify(clip_features.patch_embeddings, head="patch")
            grid = patch_labels(mask, num_patches, lcfg.theta)
            prob_rows.append(probs)
            label_rows.append(torch.from_numpy(grid.labels))
    lpg = lpg_loss(torch.stack(prob_rows),
                   torch.stack(label_rows).to(prob_rows[0].device), lcfg.eps)

    # global supervision: every entry plus the augmented feature sets
    feats, labels = [], []
    for entry in batch.entries():
        for clip_features in entry.features:
            feats.append(L.global_clip_feature(clip_features.class_embeddings))
            labels.append(entry.label)
    for item in batch.dfa:
        per_clip = L.global_clip_feature(item.features)   # (N, C)
        feats.extend(per_clip.unbind(0))
        labels.extend([LABEL_FAKE] * per_clip.shape[0])
    features = torch.stack(feats)
    label_t = torch.tensor(labels, device=features.device)
    probs = model.classify(features, head="clip")

    ce = L.cls_loss(probs, label_t, lcfg.eps)
    sup = L.supcon_loss(features, label_t, lcfg.tau, lcfg.supcon_denominator,
                        lcfg.supcon_normalize)
    gfd = ce + lcfg.upsilon * sup
    total = lcfg.omega * lpg + gfd
    return total, {"loss_lpg": lpg, "loss_cls": ce, "loss_supcon": sup}


def _grad_norm(params: list[torch.Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def train_step(model: DeepfakeDetector, batch: TrainingBatch,
               optimizer: torch.optim.Optimizer, config: Config) -> StepMetrics:
    """One optimizer update; aborts the run on a non-finite loss."""
    model.train()
    total, parts = batch_losses(model, batch, config)
    if not torch.isfinite(total):
        raise NonFiniteLossError(
            f"non-finite loss: total={float(total)} "
            f"parts={ {k: float(v) for k, v in parts.items()} }")
    optimizer.zero_grad()
    total.backward()
    grad_norm = _grad_norm(model.trainable_parameters())
    optimizer.step()
    return StepMetrics(loss_total=total.item(),
                       loss_lpg=parts["loss_lpg"].item(),
                       loss_cls=parts["loss_cls"].item(),
                       loss_supcon=parts["loss_supcon"].item(),
                       grad_norm=grad_norm)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Closed-form cosine decay from base_lr at step 0 to 0 at the last step."""
    if total_steps <= 1:
        return base_lr
    t = min(step, total_steps - 1) / (total_steps - 1)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * t))


def train(config: Config, out_dir: str | Path,
          resume: str | Path | None = None) -> Path:
    """Run the full training loop; returns the final checkpoint path."""
    if config.dataset.root is None:
        raise ConfigError("dataset.root: required for training")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    records = load_dataset(config.dataset.root)
    if not records:
        raise DatasetError(f"no videos found under {config.dataset.root}")

    tcfg = config.trainer
    torch.manual_seed(tcfg.seed)
    rng = np.random.default_rng(tcfg.seed)
    model = build_model(config.encoder)
    optimizer = torch.optim.Adam(model.trainable_parameters(),
                                 lr=tcfg.learning_rate,
                                 weight_decay=tcfg.weight_decay)
    iters = default_iters_per_epoch(config, len(records))
    total_steps = tcfg.epochs * iters
    step, start_epoch = 0, 0

    if resume is not None:
        model, payload = DeepfakeDetector.load_checkpoint(resume)
        model.set_train_scope(config.encoder.train_mode,
                              config.encoder.train_layer_norms)
        optimizer = torch.optim.Adam(model.trainable_parameters(),
                                     lr=tcfg.learning_rate,
                                     weight_decay=tcfg.weight_decay)
        optimizer.load_state_dict(payload["optimizer_state"])
        step = int(payload["step"])
        start_epoch = int(payload["epoch"]) + 1
        rng.bit_generator.state = payload["numpy_rng_state"]
        torch.set_rng_state(payload["torch_rng_state"].cpu())
        logger.info("resumed from %s at epoch %d, step %d", resume,
                    start_epoch, step)

    save_config(config, out_dir / "config.yaml")
    metrics_path = out_dir / "metrics.jsonl"
    metrics_file = metrics_path.open("a" if resume else "w")

    trainable = model.trainable_fraction()
    logger.info("training %d/%d epochs, %d iters/epoch, %.1f%% of parameters "
                "trainable", tcfg.epochs - start_epoch, tcfg.epochs, iters,
                100 * trainable)

    cache = FrameCache()
    last_ckpt = ckpt_dir / f"epoch_{start_epoch:04d}.pt"
    try:
        for epoch in range(start_epoch, tcfg.epochs):
            for _ in range(iters):
                lr = (cosine_lr(step, total_steps, tcfg.learning_rate)
                      if tcfg.schedule == "cosine" else tcfg.learning_rate)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                batch = compose_batch(records, rng, config,
                                      model.encode_frames_batch, cache)
                metrics = train_step(model, batch, optimizer, config)
                metrics_file.write(json.dumps(
                    {"step": step, "epoch": epoch, "lr": lr,
                     **asdict(metrics)}) + "\n")
                metrics_file.flush()
                step += 1
            if (epoch + 1) % tcfg.checkpoint_every == 0 or epoch == tcfg.epochs - 1:
                last_ckpt = model.save_checkpoint(
                    ckpt_dir / f"epoch_{epoch:04d}.pt",
                    extra={"optimizer_state": optimizer.state_dict(),
                           "step": step, "epoch": epoch,
                           "numpy_rng_state": rng.bit_generator.state,
                           "torch_rng_state": torch.get_rng_state()})
    finally:
        metrics_file.close()
    return last_ckpt
