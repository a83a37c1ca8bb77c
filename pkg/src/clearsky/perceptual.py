"""Frozen multi-level feature pyramid used by the contrastive regularizer.

Five stages of (3x3 conv, leaky rectifier slope 0.1, 2x average pool with
ceil mode), channels 3->8->16->32->32->32, parameters drawn once from a
fixed-seed orthogonal initialization and never trained. Stands in for a
pretrained classification network at desk scale; anything exposing the same
stage interface can be plugged in instead.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .backbone import FeatureMap, image_to_tensor, tensor_to_array
from .errors import InvalidArgumentError

STAGE_CHANNELS = (8, 16, 32, 32, 32)
NUM_STAGES = len(STAGE_CHANNELS)
MIN_SIZE = 16  # each of the 5 ceil-mode poolings keeps >= 1 pixel


class PerceptualPyramid(nn.Module):
    def __init__(self, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.seed = seed
        torch.manual_seed(seed)
        convs = []
        cin = 3
        for cout in STAGE_CHANNELS:
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            nn.init.orthogonal_(conv.weight.view(cout, -1))
            nn.init.zeros_(conv.bias)
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.act = nn.LeakyReLU(0.1)
        self.pool = nn.AvgPool2d(2, ceil_mode=True)
        self.to(dtype)
        for p in self.parameters():
            p.requires_grad_(False)

    def stages(self, x: torch.Tensor) -> list:
        """Five progressively downsampled feature tensors.

        Differentiable w.r.t. x (parameters are frozen, not the graph).
        """
        if x.shape[-1] < MIN_SIZE or x.shape[-2] < MIN_SIZE:
            raise InvalidArgumentError(
                f"image {tuple(x.shape[-2:])} too small for 5 pyramid stages (min {MIN_SIZE})"
            )
        outs = []
        for conv in self.convs:
            x = self.pool(self.act(conv(x)))
            outs.append(x)
        return outs


def extract_pyramid(pyr: PerceptualPyramid, img) -> list:
    dtype = next(pyr.parameters()).dtype
    x = image_to_tensor(img, dtype)
    with torch.no_grad():
        return [FeatureMap(tensor_to_array(s)) for s in pyr.stages(x)]
