"""Configuration schema, YAML parsing, validation, and presets.

Precedence is defaults -> config file -> dotted CLI overrides. Unknown keys
are rejected with their full key path. The fully resolved config can be
echoed back to YAML and re-parsed to an identical object.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class DatasetConfig:
    root: str | None = None      # dataset directory for training
    clip_len: int = 12           # consecutive frames per clip
    clips_per_video: int = 4     # training clips sampled per video per epoch pool


@dataclass
class SamConfig:
    """Parameter ranges for synthetic artifact blending."""

    color_shift: float = 0.08                 # per-channel offset ~ U(-c, c)
    brightness: list[float] = field(default_factory=lambda: [0.9, 1.1])
    sharpness: list[float] = field(default_factory=lambda: [0.0, 0.5])
    enhance_prob: float = 0.5                 # each enhancement independently on
    jitter: float = 0.02                      # per-frame magnitude wobble (+-2%)
    jitter_enabled: bool = True
    deform_grid: int = 4                      # control points per axis
    deform_max_frac: float = 0.05             # max displacement / min(H, W)
    blur_kernels: list[int] = field(default_factory=lambda: [3, 5, 7, 9, 11, 13, 15])
    blend_ratios: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    deform_before_blur: bool = True


@dataclass
class EncoderConfig:
    preset: str | None = None        # "toy" | "full"; fills the fields below
    image_size: int = 224
    patch_size: int = 16
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    adapter_bottleneck: int = 384
    num_frames: int = 12
    mlp_ratio: float = 4.0
    adapter_cls_mode: str = "temporal"   # "temporal" | "bypass"
    train_mode: str = "adapters_only"    # "adapters_only" | "full"
    train_layer_norms: bool = False      # only relevant in adapters_only mode
    pretrained_path: str | None = None   # name->tensor manifest (see README)

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2


ENCODER_PRESETS: dict[str, dict[str, Any]] = {
    # ViT-B/16 geometry with the published adapter width.
    "full": dict(image_size=224, patch_size=16, embed_dim=768, depth=12,
                 num_heads=12, adapter_bottleneck=384, num_frames=12),
    # Desk-scale preset used by the toy end-to-end run.
    "toy": dict(image_size=64, patch_size=8, embed_dim=128, depth=4,
                num_heads=4, adapter_bottleneck=64, num_frames=6),
}


@dataclass
class DfaConfig:
    beta_a: float = 0.1            # Beta(a, b) mixing-weight prior
    beta_b: float = 0.1
    alpha: float = 1.1             # boundary-expansion std scale, >= 1
    sigma_floor: float = 1e-5      # std clamp for division safety
    stats_grad: bool = False       # backprop through channel stats
    symmetrize_lambda: bool = False  # use max(lambda, 1-lambda)


@dataclass
class LossConfig:
    theta: int = 10                # manipulated-pixel threshold per patch
    omega: float = 0.5             # patch-loss weight in the overall loss
    upsilon: float = 0.5           # contrastive weight inside the global loss
    tau: float = 0.07              # contrastive temperature
    supcon_denominator: str = "positives"  # "positives" | "all"
    supcon_normalize: bool = True
    eps: float = 1e-7              # probability clamp before log


@dataclass
class TrainerConfig:
    epochs: int = 80
    iters_per_epoch: int | None = None   # default: ceil(len(dataset) / 8)
    batch_videos: int = 4                # videos drawn per iteration
    clips_per_iteration: int = 1         # clips per drawn video per iteration
    learning_rate: float = 3e-4
    weight_decay: float = 5e-4
    schedule: str = "cosine"             # "cosine" | "constant"
    seed: int = 0
    p_blend_fake: float = 0.5            # chance a fake sample is freshly blended
    max_blend_retries: int = 3
    checkpoint_every: int = 1            # epochs between checkpoints


@dataclass
class EvalConfig:
    heatmap_colormap: str = "jet"
    heatmap_alpha: float = 0.5


@dataclass
class SyntheticConfig:
    num_real: int = 8
    num_fake: int = 8
    frames_per_video: int = 60
    image_size: int = 64


@dataclass
class Config:
    schema_version: int = SCHEMA_VERSION
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    sam: SamConfig = field(default_factory=SamConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    dfa: DfaConfig = field(default_factory=DfaConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


_SECTION_TYPES = {
    "dataset": DatasetConfig,
    "sam": SamConfig,
    "encoder": EncoderConfig,
    "dfa": DfaConfig,
    "losses": LossConfig,
    "trainer": TrainerConfig,
    "eval": EvalConfig,
    "synthetic": SyntheticConfig,
}


def _coerce(value: Any, annotation: str, path: str) -> Any:
    """Check a raw YAML value against a dataclass field annotation."""
    optional = "| None" in annotation or "None |" in annotation
    base = annotation.replace("| None", "").replace("None |", "").strip()
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{path}: may not be null")
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {value!r}")
        return value
    if base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if base.startswith("list[int]"):
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected list of ints, got {value!r}")
        return list(value)
    if base.startswith("list[float]"):
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected list of numbers, got {value!r}")
        return [float(v) for v in value]
    raise ConfigError(f"{path}: unsupported field type {annotation!r}")


def _build_section(cls: type, data: dict, prefix: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected a mapping, got {data!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown key {prefix}.{key}")
        kwargs[key] = _coerce(value, fields[key].type, f"{prefix}.{key}")
    return cls(**kwargs)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _set_dotted(data: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted}: {part} is not a section")
    node[parts[-1]] = value


def parse_overrides(pairs: list[str]) -> dict:
    """Turn ["losses.upsilon=1.0", ...] into a nested override mapping."""
    data: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r}: expected key=value")
        key, raw = pair.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(raw))
    return data


def parse_config(path: str | Path | None = None,
                 overrides: dict | list[str] | None = None) -> Config:
    """Load a config with defaults -> file -> overrides precedence."""
    if isinstance(overrides, list):
        overrides = parse_overrides(overrides)
    file_data: dict = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        file_data = loaded
    merged = _deep_merge(file_data, overrides or {})

    version = merged.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version}")

    sections: dict[str, Any] = {}
    for key, value in merged.items():
        if key not in _SECTION_TYPES:
            raise ConfigError(f"unknown key {key}")
        sections[key] = value

    encoder_data = dict(sections.get("encoder", {}) or {})
    preset = encoder_data.get("preset")
    if preset is not None:
        if preset not in ENCODER_PRESETS:
            raise ConfigError(
                f"encoder.preset: unknown preset {preset!r} "
                f"(choose from {sorted(ENCODER_PRESETS)})")
        encoder_data = _deep_merge(
            {**ENCODER_PRESETS[preset], "preset": preset}, encoder_data)
        sections["encoder"] = encoder_data

    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        kwargs[name] = _build_section(cls, sections.get(name, {}) or {}, name)
    cfg = Config(schema_version=version, **kwargs)
    validate_config(cfg)
    return cfg


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: Config) -> None:
    d, s, e = cfg.dataset, cfg.sam, cfg.encoder
    f, l, t = cfg.dfa, cfg.losses, cfg.trainer
    _require(d.clip_len >= 1, "dataset.clip_len: must be >= 1")
    _require(d.clips_per_video >= 1, "dataset.clips_per_video: must be >= 1")

    _require(s.color_shift >= 0, "sam.color_shift: must be >= 0")
    for name, rng in (("brightness", s.brightness), ("sharpness", s.sharpness)):
        _require(len(rng) == 2 and rng[0] <= rng[1],
                 f"sam.{name}: expected [lo, hi] with lo <= hi")
    _require(0.0 <= s.enhance_prob <= 1.0, "sam.enhance_prob: must be in [0, 1]")
    _require(s.jitter >= 0, "sam.jitter: must be >= 0")
    _require(s.deform_grid >= 2, "sam.deform_grid: must be >= 2")
    _require(0.0 <= s.deform_max_frac < 0.5, "sam.deform_max_frac: must be in [0, 0.5)")
    _require(len(s.blur_kernels) > 0 and all(k >= 1 and k % 2 == 1 for k in s.blur_kernels),
             "sam.blur_kernels: all kernels must be odd and >= 1")
    _require(len(s.blend_ratios) > 0 and all(0 < r <= 1 for r in s.blend_ratios),
             "sam.blend_ratios: all ratios must be in (0, 1]")

    _require(e.image_size % e.patch_size == 0,
             "encoder.image_size: must be divisible by encoder.patch_size")
    _require(e.embed_dim % e.num_heads == 0,
             "encoder.embed_dim: must be divisible by encoder.num_heads")
    _require(e.adapter_bottleneck < e.embed_dim,
             "encoder.adapter_bottleneck: must be < embed_dim")
    _require(e.depth >= 1, "encoder.depth: must be >= 1")
    _require(e.num_frames >= 1, "encoder.num_frames: must be >= 1")
    _require(e.adapter_cls_mode in ("temporal", "bypass"),
             "encoder.adapter_cls_mode: must be 'temporal' or 'bypass'")
    _require(e.train_mode in ("adapters_only", "full"),
             "encoder.train_mode: must be 'adapters_only' or 'full'")
    _require(e.num_frames == d.clip_len,
             "encoder.num_frames: must equal dataset.clip_len")

    _require(f.beta_a > 0 and f.beta_b > 0, "dfa.beta_a/beta_b: must be > 0")
    _require(f.alpha >= 1.0, "dfa.alpha: must be >= 1")
    _require(f.sigma_floor > 0, "dfa.sigma_floor: must be > 0")

    _require(l.theta >= 1, "losses.theta: must be >= 1")
    _require(l.omega >= 0, "losses.omega: must be >= 0")
    _require(l.upsilon >= 0, "losses.upsilon: must be >= 0")
    _require(l.tau > 0, "losses.tau: must be > 0")
    _require(l.supcon_denominator in ("positives", "all"),
             "losses.supcon_denominator: must be 'positives' or 'all'")
    _require(0 < l.eps < 0.5, "losses.eps: must be in (0, 0.5)")

    _require(t.epochs >= 1, "trainer.epochs: must be >= 1")
    _require(t.iters_per_epoch is None or t.iters_per_epoch >= 1,
             "trainer.iters_per_epoch: must be >= 1 when set")
    _require(t.batch_videos >= 1, "trainer.batch_videos: must be >= 1")
    _require(t.clips_per_iteration >= 1, "trainer.clips_per_iteration: must be >= 1")
    _require(t.learning_rate > 0, "trainer.learning_rate: must be > 0")
    _require(t.weight_decay >= 0, "trainer.weight_decay: must be >= 0")
    _require(t.schedule in ("cosine", "constant"),
             "trainer.schedule: must be 'cosine' or 'constant'")
    _require(0.0 <= t.p_blend_fake <= 1.0, "trainer.p_blend_fake: must be in [0, 1]")
    _require(t.max_blend_retries >= 1, "trainer.max_blend_retries: must be >= 1")
    _require(t.checkpoint_every >= 1, "trainer.checkpoint_every: must be >= 1")

    _require(0.0 <= cfg.eval.heatmap_alpha <= 1.0,
             "eval.heatmap_alpha: must be in [0, 1]")
    _require(cfg.synthetic.num_real >= 0, "synthetic.num_real: must be >= 0")
    _require(cfg.synthetic.num_fake >= 0, "synthetic.num_fake: must be >= 0")
    _require(cfg.synthetic.frames_per_video >= 48,
             "synthetic.frames_per_video: must be >= 48 (loader minimum)")
    _require(cfg.synthetic.image_size >= 16, "synthetic.image_size: must be >= 16")


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: Config, path: str | Path) -> None:
    """Echo the fully resolved config; parse_config(path) round-trips."""
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def default_iters_per_epoch(cfg: Config, num_videos: int) -> int:
    if cfg.trainer.iters_per_epoch is not None:
        return cfg.trainer.iters_per_epoch
    return max(1, math.ceil(num_videos / 8))
