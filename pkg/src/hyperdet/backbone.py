"""Vision-transformer backbone with adapter sites on the MLP linears of its last blocks.

The backbone itself is always frozen.  Trainable state lives in the
hypernetwork and the sigmoid classification head, bundled in ``DetectorNet``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, InputSizeError
from .hyperlora import N_EXPERTS, POSITIONS, HyperNetwork, LoRALinear

# CLIP image statistics; residual views go through the same standardization.
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class BackboneSpec:
    variant: str = "toy"
    image_size: int = 32
    patch_size: int = 4
    channels: int = 3
    depth: int = 4
    width: int = 64
    mlp_ratio: int = 4
    heads: int = 4
    feature_dim: int = 64
    n_finetune: int = 8
    fine_tuned_blocks: tuple | None = None
    positions: tuple = POSITIONS
    pooling: str = "cls"

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size={self.image_size} must be a multiple of patch_size={self.patch_size}"
            )
        if self.width % self.heads:
            raise ConfigError(f"width={self.width} must be divisible by heads={self.heads}")
        if self.pooling not in ("cls", "mean"):
            raise ConfigError(f"pooling={self.pooling!r}: expected 'cls' or 'mean'")
        if self.fine_tuned_blocks is None:
            n = min(self.n_finetune, self.depth)
            self.fine_tuned_blocks = tuple(range(self.depth - n, self.depth))
        self.fine_tuned_blocks = tuple(int(j) for j in self.fine_tuned_blocks)
        bad = [j for j in self.fine_tuned_blocks if not 0 <= j < self.depth]
        if bad:
            raise ConfigError(f"fine_tuned_blocks: {bad} outside 0..{self.depth - 1}")
        self.positions = tuple(int(k) for k in self.positions)
        if not set(self.positions) <= set(POSITIONS) or not self.positions:
            raise ConfigError(f"positions={self.positions}: expected a non-empty subset of {POSITIONS}")

    @property
    def sites(self) -> list:
        return [(j, k) for j in self.fine_tuned_blocks for k in self.positions]

    @property
    def site_shapes(self) -> dict:
        hidden = self.width * self.mlp_ratio
        shapes = {1: (hidden, self.width), 2: (self.width, hidden)}
        return {k: shapes[k] for k in self.positions}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fine_tuned_blocks"] = list(self.fine_tuned_blocks)
        d["positions"] = list(self.positions)
        return d


class Attention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x):
        b, n, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(x).view(b, n, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        att = torch.softmax((q @ k.transpose(-2, -1)) / math.sqrt(hd), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, width: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.ln2 = nn.LayerNorm(width)
        self.fc1 = LoRALinear(width, width * mlp_ratio)
        self.fc2 = LoRALinear(width * mlp_ratio, width)

    def forward(self, x, lora1=None, lora2=None, scale=1.0):
        x = x + self.attn(self.ln1(x))
        h = F.gelu(self.fc1(self.ln2(x), lora1, scale))
        return x + self.fc2(h, lora2, scale)


class ToyViT(nn.Module):
    """Small randomly initialized ViT: patch embed -> blocks -> pooled feature."""

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        self.spec = spec
        n_patches = (spec.image_size // spec.patch_size) ** 2
        self.patch_embed = nn.Conv2d(spec.channels, spec.width, spec.patch_size, spec.patch_size)
        self.cls_token = nn.Parameter(torch.randn(1, 1, spec.width) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(1, n_patches + 1, spec.width) * 0.02)
        self.blocks = nn.ModuleList(
            Block(spec.width, spec.heads, spec.mlp_ratio) for _ in range(spec.depth)
        )
        self.ln_post = nn.LayerNorm(spec.width)
        self.proj = None
        if spec.feature_dim != spec.width:
            self.proj = nn.Linear(spec.width, spec.feature_dim, bias=False)

    def forward(self, x, loras=None, scale=1.0):
        loras = loras or {}
        x = self.patch_embed(x).flatten(2).transpose(1, 2)
        x = torch.cat([self.cls_token.expand(x.shape[0], -1, -1), x], dim=1) + self.pos_embed
        for j, blk in enumerate(self.blocks):
            x = blk(x, loras.get((j, 1)), loras.get((j, 2)), scale)
        pooled = x[:, 0] if self.spec.pooling == "cls" else x[:, 1:].mean(dim=1)
        f = self.ln_post(pooled)
        return f if self.proj is None else self.proj(f)


BACKBONES = {"toy": ToyViT}


def register_backbone(name: str, factory):
    """Register a backbone class; it must accept a BackboneSpec and expose
    ``forward(x, loras, scale)`` plus ``blocks[j].fc1/fc2`` LoRALinear sites.
    A pretrained CLIP-class encoder plugs in here."""
    BACKBONES[name] = factory


def build_backbone(spec: BackboneSpec) -> nn.Module:
    try:
        factory = BACKBONES[spec.variant]
    except KeyError:
        raise ConfigError(f"variant={spec.variant!r}: known backbones {sorted(BACKBONES)}") from None
    return factory(spec)


@dataclass
class ModelConfig:
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    rank: int = 16
    embed_dim: int = 64
    hidden_dim: int = 128
    lora_scale: float = 1.0
    affine_hypernet: bool = False
    freeze_embeddings: bool = False
    merge: str = "prob"
    mean: tuple = CLIP_MEAN
    std: tuple = CLIP_STD
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneSpec(**self.backbone)
        if self.merge not in ("prob", "logit"):
            raise ConfigError(f"merge={self.merge!r}: expected 'prob' or 'logit'")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype={self.dtype!r}: expected one of {sorted(_DTYPES)}")
        self.mean = tuple(float(m) for m in self.mean)
        self.std = tuple(float(s) for s in self.std)
        c = self.backbone.channels
        if len(self.mean) != c or len(self.std) != c:
            raise ConfigError(f"mean/std must have {c} entries")
        if min(self.std) <= 0:
            raise ConfigError("std entries must be > 0")

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        d["mean"], d["std"] = list(self.mean), list(self.std)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneSpec(**d.get("backbone", {}))
        return cls(**d)


class DetectorNet(nn.Module):
    """Frozen backbone, hypernetwork-generated adapters and a sigmoid head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        spec = cfg.backbone
        with torch.random.fork_rng():
            torch.manual_seed(cfg.seed)
            self.backbone = build_backbone(spec)
            self.backbone.requires_grad_(False)
            self.hypernet = HyperNetwork(
                spec.fine_tuned_blocks,
                spec.site_shapes,
                cfg.rank,
                embed_dim=cfg.embed_dim,
                hidden_dim=cfg.hidden_dim,
                n_tasks=N_EXPERTS,
                affine=cfg.affine_hypernet,
                freeze_embeddings=cfg.freeze_embeddings,
                scale=cfg.lora_scale,
            )
            self.head = nn.Linear(spec.feature_dim, 1)
            nn.init.normal_(self.head.weight, std=0.02)
            nn.init.zeros_(self.head.bias)
        self.to(cfg.torch_dtype)
        self._lora_cache = {}
        self.cache_loras = False

    # parameter groups -------------------------------------------------------
    def frozen_parameters(self):
        return dict(self.backbone.named_parameters())

    def trainable_parameters(self):
        named = [("hypernet." + n, p) for n, p in self.hypernet.named_parameters()]
        named += [("head." + n, p) for n, p in self.head.named_parameters()]
        return {n: p for n, p in named if p.requires_grad}

    def invalidate_cache(self):
        self._lora_cache.clear()

    def train(self, mode: bool = True):
        self.invalidate_cache()
        return super().train(mode)

    # forward ----------------------------------------------------------------
    def loras(self, expert: int):
        if expert is None:
            return None
        if self.cache_loras and not torch.is_grad_enabled():
            if expert not in self._lora_cache:
                self._lora_cache[expert] = self.hypernet.generate_all(expert)
            return self._lora_cache[expert]
        return self.hypernet.generate_all(expert)

    def _check_input(self, x):
        s = self.cfg.backbone
        if x.ndim != 4 or x.shape[1] != s.channels or tuple(x.shape[-2:]) != (s.image_size, s.image_size):
            raise InputSizeError(
                f"expected input (N, {s.channels}, {s.image_size}, {s.image_size}), got {tuple(x.shape)}"
            )

    def features(self, x, expert):
        """Pooled backbone features; ``expert=None`` runs the frozen path."""
        self._check_input(x)
        return self.backbone(x, self.loras(expert), self.cfg.lora_scale)

    def logits(self, x, expert):
        return self.head(self.features(x, expert)).squeeze(-1)

    def forward(self, x, expert):
        return torch.sigmoid(self.logits(x, expert))

    # preprocessing ----------------------------------------------------------
    def standardize(self, pixels) -> torch.Tensor:
        """H x W x C (or N x H x W x C) numpy pixels -> standardized N x C x H x W tensor."""
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        mean = np.asarray(self.cfg.mean)
        std = np.asarray(self.cfg.std)
        arr = (arr - mean) / std
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(self.cfg.torch_dtype)


def build_model(cfg: ModelConfig | None = None) -> DetectorNet:
    return DetectorNet(cfg or ModelConfig())


def _pixels(view):
    return getattr(view, "pixels", view)


def forward(model: DetectorNet, view, expert: int) -> float:
    """Fake-probability for one (already resized) view through one expert."""
    with torch.no_grad():
        return float(model(model.standardize(_pixels(view)), expert)[0])


def extract_features(model: DetectorNet, view, expert: int) -> np.ndarray:
    with torch.no_grad():
        return model.features(model.standardize(_pixels(view)), expert)[0].cpu().numpy()
