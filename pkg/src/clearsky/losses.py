"""Training objectives.

All reductions are means over elements, so magnitudes are invariant to patch
size and the balance weights transfer across resolutions. The contrastive
term is evaluated as w_l * softplus((d+ - d-) / tau), algebraically equal to
-w_l * log(e^{-d+/tau} / (e^{-d+/tau} + e^{-d-/tau})) but overflow-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .backbone import RestorationModel, image_to_tensor, _model_dtype
from .errors import InvalidArgumentError, NumericError, ShapeMismatchError
from .perceptual import PerceptualPyramid

DEFAULT_STAGE_WEIGHTS = (1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0)


@dataclass(frozen=True)
class ContrastiveConfig:
    tau: float = 0.5
    weights: tuple = DEFAULT_STAGE_WEIGHTS

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError("tau must be > 0")
        if len(self.weights) != 5 or any(w <= 0 for w in self.weights):
            raise InvalidArgumentError("need 5 positive stage weights")


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 0.8
    beta2: float = 0.2
    alpha: float = 1.0
    lam: float = 0.3

    def __post_init__(self):
        for name in ("beta1", "beta2", "alpha", "lam"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise InvalidArgumentError(f"{name} must be finite and >= 0")


def _pair(a, b, dtype=None):
    ta = a if isinstance(a, torch.Tensor) else image_to_tensor(a, dtype or torch.float64)
    tb = b if isinstance(b, torch.Tensor) else image_to_tensor(b, ta.dtype)
    if ta.shape != tb.shape:
        raise ShapeMismatchError(f"shape mismatch {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return ta, tb


def l1_loss(a, b) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    ta, tb = _pair(a, b)
    return (ta - tb).abs().mean()


def contrastive_loss(anchor, positive, negative, pyr: PerceptualPyramid,
                     cfg: ContrastiveConfig = ContrastiveConfig()) -> torch.Tensor:
    dtype = next(pyr.parameters()).dtype
    ta = anchor if isinstance(anchor, torch.Tensor) else image_to_tensor(anchor, dtype)
    tp = positive if isinstance(positive, torch.Tensor) else image_to_tensor(positive, dtype)
    tn = negative if isinstance(negative, torch.Tensor) else image_to_tensor(negative, dtype)
    if not (ta.shape == tp.shape == tn.shape):
        raise ShapeMismatchError("anchor/positive/negative shapes differ")
    fa = pyr.stages(ta)
    fp = pyr.stages(tp)
    fn = pyr.stages(tn)
    loss = ta.new_zeros(())
    for w, sa, sp, sn in zip(cfg.weights, fa, fp, fn):
        d_pos = (sa - sp).abs().mean()
        d_neg = (sa - sn).abs().mean()
        loss = loss + w * F.softplus((d_pos - d_neg) / cfg.tau)
    return loss


def single_weather_loss(model: RestorationModel, sample, pyr: PerceptualPyramid,
                        w: LossWeights = LossWeights(),
                        cfg: ContrastiveConfig = ContrastiveConfig()) -> torch.Tensor:
    """L1(restored, clean) + beta1 * contrastive(restored, clean, degraded)."""
    dtype = _model_dtype(model)
    degraded = image_to_tensor(sample.degraded, dtype)
    clean = image_to_tensor(sample.clean, dtype)
    restored = model(degraded)
    loss = l1_loss(restored, clean)
    if w.beta1 > 0:
        loss = loss + w.beta1 * contrastive_loss(restored, clean, degraded, pyr, cfg)
    return loss


def knowledge_replay_loss(new_model: RestorationModel, old_model: RestorationModel,
                          mem_img, pyr: PerceptualPyramid,
                          w: LossWeights = LossWeights(),
                          cfg: ContrastiveConfig = ContrastiveConfig()) -> torch.Tensor:
    """Distill the old model's response on a stored degraded image.

    The old output is a detached pseudo-target; gradients reach only the new
    model. L1(old, new) + beta2 * contrastive(new, old, stored image).
    """
    dtype = _model_dtype(new_model)
    x = image_to_tensor(mem_img, dtype)
    with torch.no_grad():
        old_out = old_model(x)
    old_out = old_out.detach()
    new_out = new_model(x)
    if old_out.shape != new_out.shape:
        raise InvalidArgumentError("old/new model output shapes differ")
    loss = l1_loss(new_out, old_out)
    if w.beta2 > 0:
        loss = loss + w.beta2 * contrastive_loss(new_out, old_out, x, pyr, cfg)
    return loss


def principal_kd_loss(new_model: RestorationModel, old_model: RestorationModel,
                      projector, mem_img) -> torch.Tensor:
    """L1 between projected old and new mid-level features of a stored image.

    The projector is frozen; the old-feature branch is detached so gradients
    flow only into the new extractor.
    """
    dtype = _model_dtype(new_model)
    x = image_to_tensor(mem_img, dtype)
    c = new_model.config.base_channels
    if projector.config.in_channels != c or old_model.config.base_channels != c:
        raise InvalidArgumentError(
            f"projector expects {projector.config.in_channels} channels, extractors give "
            f"{old_model.config.base_channels}/{c}"
        )
    with torch.no_grad():
        z_old = projector.encode(old_model.features(x))
    z_new = projector.encode(new_model.features(x))
    return l1_loss(z_new, z_old.detach())


def total_loss(l_sw, l_kd, l_pkd, w: LossWeights = LossWeights()):
    """Overall objective: l_sw + alpha * l_kd + lambda * l_pkd."""
    for name, part in (("l_sw", l_sw), ("l_kd", l_kd), ("l_pkd", l_pkd)):
        v = float(part.detach()) if isinstance(part, torch.Tensor) else float(part)
        if not (v == v and abs(v) != float("inf")):
            raise NumericError(f"non-finite loss component {name}: {v}")
    return l_sw + w.alpha * l_kd + w.lam * l_pkd
