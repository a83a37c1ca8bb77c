"""Unified restoration network: feature extractor F(.) + projector head phi(.)
with a global residual skip, in the FFA channel/pixel-attention family.

The extractor ends at the feature-fusion (concatenation) module; the head is
two 3x3 convolutions whose last layer is zero-initialized so the initial
network is the identity through the residual.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import CorruptedModelError, InvalidArgumentError
from .imaging import Image

KERNEL = 3


@dataclass(frozen=True)
class BackboneConfig:
    base_channels: int = 16
    num_groups: int = 2
    blocks_per_group: int = 2

    def __post_init__(self):
        if self.base_channels < 4:
            raise InvalidArgumentError("base_channels must be >= 4")
        if self.num_groups < 1 or self.blocks_per_group < 1:
            raise InvalidArgumentError("num_groups and blocks_per_group must be >= 1")

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls(base_channels=16, num_groups=2, blocks_per_group=2)

    @classmethod
    def paper(cls) -> "BackboneConfig":
        return cls(base_channels=192, num_groups=3, blocks_per_group=19)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "num_groups": self.num_groups,
            "blocks_per_group": self.blocks_per_group,
        }


@dataclass(frozen=True, eq=False)
class FeatureMap:
    values: np.ndarray  # (H, W, C)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise InvalidArgumentError(f"expected (H, W, C), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("non-finite feature values")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def default_conv(cin, cout, k=KERNEL):
    return nn.Conv2d(cin, cout, k, padding=k // 2)


class CALayer(nn.Module):
    def __init__(self, channels):
        super().__init__()
        mid = max(channels // 8, 2)
        self.body = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            nn.Conv2d(channels, mid, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, channels, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.body(x)


class PALayer(nn.Module):
    def __init__(self, channels):
        super().__init__()
        mid = max(channels // 8, 2)
        self.body = nn.Sequential(
            nn.Conv2d(channels, mid, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, 1, 1),
            nn.Sigmoid(),
        )

    def forward(self, x):
        return x * self.body(x)


class Block(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = default_conv(channels, channels)
        self.conv2 = default_conv(channels, channels)
        self.ca = CALayer(channels)
        self.pa = PALayer(channels)

    def forward(self, x):
        res = torch.relu(self.conv1(x))
        res = res + x
        res = self.conv2(res)
        res = self.pa(self.ca(res))
        return res + x


class Group(nn.Module):
    def __init__(self, channels, blocks):
        super().__init__()
        mods = [Block(channels) for _ in range(blocks)]
        mods.append(default_conv(channels, channels))
        self.body = nn.Sequential(*mods)

    def forward(self, x):
        return self.body(x) + x


class RestorationModel(nn.Module):
    """forward(x) = head(features(x)) + x; features(x) has base_channels maps."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        c = config.base_channels
        self.config = config
        self.version_tag = 0
        self.pre = default_conv(3, c)
        self.groups = nn.ModuleList(
            [Group(c, config.blocks_per_group) for _ in range(config.num_groups)]
        )
        self.fuse = nn.Conv2d(c * config.num_groups, c, 1)
        self.fuse_ca = CALayer(c)
        self.fuse_pa = PALayer(c)
        self.head_conv1 = default_conv(c, c)
        self.head_conv2 = default_conv(c, 3)
        nn.init.zeros_(self.head_conv2.weight)
        nn.init.zeros_(self.head_conv2.bias)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        y = self.pre(x)
        outs = []
        g = y
        for group in self.groups:
            g = group(g)
            outs.append(g)
        fused = self.fuse(torch.cat(outs, dim=1))
        return self.fuse_pa(self.fuse_ca(fused)) + y

    def head(self, feat: torch.Tensor) -> torch.Tensor:
        return self.head_conv2(torch.relu(self.head_conv1(feat)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x)) + x


def build_model(
    config: BackboneConfig, seed: int = 0, dtype: torch.dtype = torch.float32
) -> RestorationModel:
    torch.manual_seed(seed)
    model = RestorationModel(config).to(dtype)
    return model


def image_to_tensor(img, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Image / (H, W, 3) array -> (1, 3, H, W) tensor."""
    if isinstance(img, Image):
        arr = img.pixels
    elif isinstance(img, torch.Tensor):
        t = img.to(dtype)
        return t if t.ndim == 4 else t.unsqueeze(0)
    else:
        arr = np.asarray(img, dtype=np.float64)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def tensor_to_array(t: torch.Tensor) -> np.ndarray:
    """(1, C, H, W) tensor -> (H, W, C) float64 array."""
    return t.detach().squeeze(0).permute(1, 2, 0).numpy().astype(np.float64)


def _check_finite(model: RestorationModel) -> None:
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise CorruptedModelError(f"non-finite parameter {name}")


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


def extract_features(model: RestorationModel, img) -> FeatureMap:
    _check_finite(model)
    x = image_to_tensor(img, _model_dtype(model))
    if x.shape[-1] < 8 or x.shape[-2] < 8:
        raise InvalidArgumentError("image smaller than 8x8")
    with torch.no_grad():
        feat = model.features(x)
    return FeatureMap(tensor_to_array(feat))


def restore(model: RestorationModel, img) -> np.ndarray:
    """Raw (unclamped) restored image as an (H, W, 3) array.

    Losses consume raw values; clamp to [0, 1] only for metrics / PNG output.
    """
    _check_finite(model)
    x = image_to_tensor(img, _model_dtype(model))
    with torch.no_grad():
        out = model(x)
    return tensor_to_array(out)


def restore_image(model: RestorationModel, img) -> Image:
    return Image(np.clip(restore(model, img), 0.0, 1.0))


def clone_model(model: RestorationModel) -> RestorationModel:
    return copy.deepcopy(model)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
