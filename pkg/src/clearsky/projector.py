"""Principal component projection: a transposed channel-attention encoder
that reduces C feature channels to C_hat << C, plus a small convolutional
decoder. Trained offline as an autoencoder on memory features, then frozen
while the backbone continues continual training.

The attention map is channel-by-channel (C x C after flattening space), so
cost grows with channel count, not spatial resolution. A learnable selection
matrix maps it to C x C_hat and a softmax over the C axis makes every output
channel a convex combination of the value entries at each position.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import FeatureMap
from .errors import InvalidArgumentError

import numpy as np


@dataclass(frozen=True)
class ProjectorConfig:
    in_channels: int = 16
    out_channels: int = 4
    heads: int = 1
    attention_temp: float | None = None  # None -> learnable scalar, init 1.0

    def __post_init__(self):
        if self.out_channels >= self.in_channels:
            raise InvalidArgumentError("out_channels must be < in_channels")
        if self.heads < 1:
            raise InvalidArgumentError("heads must be >= 1")
        if self.in_channels % self.heads or self.out_channels % self.heads:
            raise InvalidArgumentError("channel counts must divide by heads")
        if self.attention_temp is not None and self.attention_temp <= 0:
            raise InvalidArgumentError("attention_temp must be > 0")

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "heads": self.heads,
            "attention_temp": self.attention_temp,
        }


class ChannelLayerNorm(nn.Module):
    """Normalize across the channel axis at every spatial position."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.eps = eps
        self.gamma = nn.Parameter(torch.ones(1, channels, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1, 1))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return self.gamma * (x - mu) / torch.sqrt(var + self.eps) + self.beta


class PrincipalProjector(nn.Module):
    def __init__(self, config: ProjectorConfig):
        super().__init__()
        self.config = config
        c, ch = config.in_channels, config.out_channels
        self.norm = ChannelLayerNorm(c)
        self.qkv = nn.Conv2d(c, 3 * c, 1)
        self.qkv_dw = nn.Conv2d(3 * c, 3 * c, 3, padding=1, groups=3 * c)
        # channel-selection matrix, one block per head
        self.select = nn.Parameter(
            torch.randn(config.heads, c // config.heads, ch // config.heads) * (c ** -0.5)
        )
        if config.attention_temp is None:
            self.temp = nn.Parameter(torch.ones(()))
        else:
            self.register_buffer("temp", torch.tensor(float(config.attention_temp)))
        self.out_conv = nn.Conv2d(ch, ch, 1)
        self.dec_conv1 = nn.Conv2d(ch, c, 3, padding=1)
        self.dec_conv2 = nn.Conv2d(c, c, 3, padding=1)
        self.act = nn.LeakyReLU(0.1)
        self.frozen = False

    def _check_channels(self, x):
        if x.shape[1] != self.config.in_channels:
            raise InvalidArgumentError(
                f"expected {self.config.in_channels} channels, got {x.shape[1]}"
            )

    def attention_mix(self, x: torch.Tensor):
        """Returns (v, v_mixed, a_hat): the value tensor, the pre-output
        convex mixture reshaped to (N, C_hat, H, W), and the column-stochastic
        attention (N, heads, C/h, C_hat/h)."""
        self._check_channels(x)
        n, c, h, w = x.shape
        nh = self.config.heads
        y = self.norm(x)
        q, k, v = self.qkv_dw(self.qkv(y)).chunk(3, dim=1)
        qf = q.reshape(n, nh, c // nh, h * w)
        kf = k.reshape(n, nh, c // nh, h * w)
        vf = v.reshape(n, nh, c // nh, h * w)
        attn = qf @ kf.transpose(-2, -1) / self.temp  # (n, nh, c/h, c/h)
        a_hat = torch.softmax(attn @ self.select, dim=-2)  # columns sum to 1 over C
        mixed = vf.transpose(-2, -1) @ a_hat  # (n, nh, HW, ch/h)
        ch = self.config.out_channels
        mixed = mixed.permute(0, 1, 3, 2).reshape(n, ch, h, w)
        return v, mixed, a_hat

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        _, mixed, _ = self.attention_mix(x)
        return self.out_conv(mixed)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[1] != self.config.out_channels:
            raise InvalidArgumentError(
                f"expected {self.config.out_channels} channels, got {z.shape[1]}"
            )
        return self.dec_conv2(self.act(self.dec_conv1(z)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))

    def freeze(self) -> "PrincipalProjector":
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        return self


def build_projector(config: ProjectorConfig, seed: int = 0,
                    dtype: torch.dtype = torch.float32) -> PrincipalProjector:
    torch.manual_seed(seed)
    return PrincipalProjector(config).to(dtype)


def _as_tensor(feat, dtype) -> torch.Tensor:
    if isinstance(feat, torch.Tensor):
        t = feat.to(dtype)
        return t if t.ndim == 4 else t.unsqueeze(0)
    values = feat.values if isinstance(feat, FeatureMap) else np.asarray(feat)
    return torch.from_numpy(np.ascontiguousarray(values.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def mhta_encode(proj: PrincipalProjector, x) -> FeatureMap:
    dtype = next(proj.parameters()).dtype
    with torch.no_grad():
        z = proj.encode(_as_tensor(x, dtype))
    return FeatureMap(z.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64))


def decode(proj: PrincipalProjector, z) -> FeatureMap:
    dtype = next(proj.parameters()).dtype
    with torch.no_grad():
        out = proj.decode(_as_tensor(z, dtype))
    return FeatureMap(out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float64))


def train_autoencoder(feature_set, cfg: ProjectorConfig, epochs: int = 100,
                      lr: float = 5e-3, batch_size: int = 4, seed: int = 0,
                      dtype: torch.dtype = torch.float32) -> PrincipalProjector:
    """Fit encoder+decoder with L1 reconstruction on the given features and
    return the projector frozen. Deterministic for a fixed (features, seed)."""
    if len(feature_set) == 0:
        raise InvalidArgumentError("empty feature set")
    tensors = [_as_tensor(f, dtype) for f in feature_set]
    for t in tensors:
        if t.shape[1] != cfg.in_channels:
            raise InvalidArgumentError(
                f"feature has {t.shape[1]} channels, config expects {cfg.in_channels}"
            )
    proj = build_projector(cfg, seed, dtype)
    opt = torch.optim.Adam(proj.parameters(), lr=lr)
    order_rng = np.random.default_rng(seed)
    for _ in range(epochs):
        perm = order_rng.permutation(len(tensors))
        for start in range(0, len(perm), batch_size):
            idx = perm[start : start + batch_size]
            opt.zero_grad()
            loss = torch.stack(
                [(proj(tensors[i]) - tensors[i]).abs().mean() for i in idx]
            ).mean()
            loss.backward()
            opt.step()
    return proj.freeze()


def reconstruction_l1(proj: PrincipalProjector, feature_set) -> float:
    dtype = next(proj.parameters()).dtype
    with torch.no_grad():
        vals = [(proj(_as_tensor(f, dtype)) - _as_tensor(f, dtype)).abs().mean().item()
                for f in feature_set]
    return float(np.mean(vals))
