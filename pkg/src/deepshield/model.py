"""Video encoder: per-frame ViT with temporal bottleneck adapters.

Tokens attend only within their own frame; the sole temporal pathway is the
depthwise 3-tap convolution inside each adapter, so one adapter application
widens a frame's receptive field by exactly +-1 frame. Adapters start as
identities (zero up-projection) and the classifier heads start at 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig
from .data import VideoClip

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ClipFeatures:
    """Encoder output for one clip."""

    class_embeddings: torch.Tensor   # (T, C)
    patch_embeddings: torch.Tensor   # (T, P, C)


class STAdapter(nn.Module):
    """Residual bottleneck with a depthwise temporal convolution.

    x + up(gelu(dwconv3d(down(x)))) with a (3, 1, 1) kernel over the
    (T, token) grid. ``cls_mode`` controls whether the class token joins the
    temporal mixing ("temporal") or skips the convolution ("bypass").
    """

    def __init__(self, dim: int, bottleneck: int, cls_mode: str = "temporal"):
        super().__init__()
        if cls_mode not in ("temporal", "bypass"):
            raise ValueError(f"unknown cls_mode {cls_mode!r}")
        self.cls_mode = cls_mode
        self.down = nn.Linear(dim, bottleneck)
        self.conv = nn.Conv3d(bottleneck, bottleneck, kernel_size=(3, 1, 1),
                              padding=(1, 0, 0), groups=bottleneck)
        self.up = nn.Linear(bottleneck, dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def _temporal_conv(self, h: torch.Tensor) -> torch.Tensor:
        # (B, T, N, b) -> depthwise conv over T at every token -> same shape
        v = h.permute(0, 3, 1, 2).unsqueeze(-1)    # (B, b, T, N, 1)
        v = self.conv(v)
        return v.squeeze(-1).permute(0, 2, 3, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 4:
            raise ValueError(f"expected (B, T, N, d) or (T, N, d) tokens, "
                             f"got shape {tuple(x.shape)}")
        h = self.down(x)
        if self.cls_mode == "bypass":
            mixed = torch.cat(
                [h[:, :, :1], self._temporal_conv(h[:, :, 1:])], dim=2)
        else:
            mixed = self._temporal_conv(h)
        out = x + self.up(F.gelu(mixed))
        return out.squeeze(0) if squeeze else out


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block with an adapter before attention and MLP."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        dim = cfg.embed_dim
        self.adapter_attn = STAdapter(dim, cfg.adapter_bottleneck,
                                      cfg.adapter_cls_mode)
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, cfg.num_heads)
        self.adapter_mlp = STAdapter(dim, cfg.adapter_bottleneck,
                                     cfg.adapter_cls_mode)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * cfg.mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, n, d = x.shape
        x = self.adapter_attn(x)
        y = x.reshape(b * t, n, d)               # spatial attention per frame
        y = y + self.attn(self.norm1(y))
        x = self.adapter_mlp(y.reshape(b, t, n, d))
        y = x.reshape(b * t, n, d)
        y = y + self.mlp(self.norm2(y))
        return y.reshape(b, t, n, d)


class VideoEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        dim = cfg.embed_dim
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=cfg.patch_size,
                                     stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.empty(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.empty(1, cfg.num_patches + 1, dim))
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(dim)

    def forward(self, clips: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, T, 3, H, W) -> class (B, T, C) and patch (B, T, P, C) tokens."""
        if clips.ndim != 5 or clips.shape[2] != 3:
            raise ValueError(f"expected (B, T, 3, H, W), got {tuple(clips.shape)}")
        b, t, _, h, w = clips.shape
        cfg = self.cfg
        if t != cfg.num_frames or h != cfg.image_size or w != cfg.image_size:
            raise ValueError(
                f"clip geometry {t}x{h}x{w} does not match encoder config "
                f"{cfg.num_frames}x{cfg.image_size}x{cfg.image_size}")
        x = self.patch_embed(clips.reshape(b * t, 3, h, w))
        x = x.flatten(2).transpose(1, 2)                     # (BT, P, C)
        cls = self.cls_token.expand(b * t, -1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        x = x.reshape(b, t, cfg.num_patches + 1, cfg.embed_dim)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, :, 0], x[:, :, 1:]


class DeepfakeDetector(nn.Module):
    """Encoder plus the two binary heads (patch tokens and global features)."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = VideoEncoder(cfg)
        self.patch_head = nn.Linear(cfg.embed_dim, 2)
        self.clip_head = nn.Linear(cfg.embed_dim, 2)
        for head in (self.patch_head, self.clip_head):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)
        self.set_train_scope(cfg.train_mode, cfg.train_layer_norms)

    # -- feature extraction ------------------------------------------------

    def forward(self, clips: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.encoder(clips)

    def _to_tensor(self, frames: np.ndarray) -> torch.Tensor:
        # (T, H, W, 3) float in [0, 1] -> (T, 3, H, W) on the model's dtype
        p = next(self.parameters())
        x = torch.from_numpy(np.ascontiguousarray(frames))
        return x.permute(0, 3, 1, 2).to(dtype=p.dtype, device=p.device)

    def encode_frames_batch(self, frame_arrays: list[np.ndarray]) -> list[ClipFeatures]:
        """Encode several (T, H, W, 3) pixel arrays in one forward pass."""
        batch = torch.stack([self._to_tensor(f) for f in frame_arrays])
        cls_emb, patch_emb = self.forward(batch)
        return [ClipFeatures(class_embeddings=cls_emb[i],
                             patch_embeddings=patch_emb[i])
                for i in range(len(frame_arrays))]

    def encode_clip(self, clip: VideoClip) -> ClipFeatures:
        return self.encode_frames_batch([clip.frames])[0]

    def classify(self, features: torch.Tensor, head: str = "clip") -> torch.Tensor:
        """Fake-class probability in (0, 1) from a 2-logit linear head."""
        if head == "clip":
            logits = self.clip_head(features)
        elif head == "patch":
            logits = self.patch_head(features)
        else:
            raise ValueError(f"head must be 'clip' or 'patch', got {head!r}")
        return logits.softmax(dim=-1)[..., 1]

    # -- parameter management ----------------------------------------------

    def set_train_scope(self, mode: str, train_layer_norms: bool = False) -> None:
        """'full' trains everything; 'adapters_only' freezes the ViT trunk."""
        if mode not in ("adapters_only", "full"):
            raise ValueError(f"unknown train mode {mode!r}")
        self.train_scope = mode
        if mode == "full":
            for p in self.parameters():
                p.requires_grad_(True)
            return
        for name, p in self.named_parameters():
            trainable = ("adapter_" in name or name.startswith("patch_head")
                         or name.startswith("clip_head"))
            if train_layer_norms and (".norm" in name or "encoder.norm" in name):
                trainable = True
            p.requires_grad_(trainable)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def trainable_fraction(self) -> float:
        total = sum(p.numel() for p in self.parameters())
        trainable = sum(p.numel() for p in self.trainable_parameters())
        return trainable / total

    # -- persistence ---------------------------------------------------------

    def save_checkpoint(self, path: str | Path, extra: dict | None = None) -> Path:
        """Single-file archive: named tensors plus a JSON config header.

        Keys: format_version, encoder_config (JSON string), model_state,
        plus any trainer-supplied extras (optimizer_state, step, ...).
        """
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "encoder_config": json.dumps(self.cfg.__dict__),
            "model_state": self.state_dict(),
        }
        if extra:
            payload.update(extra)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
        return path

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> tuple["DeepfakeDetector", dict]:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {version!r}")
        cfg = EncoderConfig(**json.loads(payload["encoder_config"]))
        model = cls(cfg)
        model.load_state_dict(payload["model_state"])
        return model, payload

    def load_weight_manifest(self, path: str | Path) -> list[str]:
        """Load a plain name->tensor mapping (e.g. converted pretrained weights).

        Missing keys are left at their initialization (adapters/heads of a
        converted image backbone); unknown names are an error. Returns the
        names that were loaded.
        """
        manifest = torch.load(path, map_location="cpu", weights_only=True)
        if not isinstance(manifest, dict):
            raise ValueError("weight manifest must be a name->tensor mapping")
        own = self.state_dict()
        unknown = [k for k in manifest if k not in own]
        if unknown:
            raise ValueError(f"manifest has unknown parameter names: {unknown[:5]}")
        for key, tensor in manifest.items():
            if tuple(own[key].shape) != tuple(tensor.shape):
                raise ValueError(
                    f"manifest shape mismatch for {key}: "
                    f"{tuple(tensor.shape)} vs {tuple(own[key].shape)}")
        own.update(manifest)
        self.load_state_dict(own)
        return sorted(manifest)


def build_model(cfg: EncoderConfig) -> DeepfakeDetector:
    model = DeepfakeDetector(cfg)
    if cfg.pretrained_path:
        model.load_weight_manifest(cfg.pretrained_path)
    return model
