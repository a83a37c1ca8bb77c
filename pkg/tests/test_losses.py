import math

import numpy as np
import pytest
import torch

from clearsky.backbone import build_model, BackboneConfig, image_to_tensor, clone_model
from clearsky.checkpoint import param_hash
from clearsky.errors import InvalidArgumentError, NumericError, ShapeMismatchError
from clearsky.imaging import Image, SamplePair
from clearsky.losses import (
    ContrastiveConfig,
    LossWeights,
    contrastive_loss,
    knowledge_replay_loss,
    l1_loss,
    principal_kd_loss,
    single_weather_loss,
    total_loss,
)
from clearsky.projector import ProjectorConfig, build_projector
from conftest import fd_param_check, fd_input_check, rand_image

SUM_W_LN2 = 1.46875 * math.log(2.0)


@pytest.fixture()
def old_model64(tiny_model64):
    old = clone_model(tiny_model64)
    for p in old.parameters():
        p.requires_grad_(False)
    return old


@pytest.fixture()
def projector64():
    return build_projector(ProjectorConfig(in_channels=8, out_channels=4),
                           seed=2, dtype=torch.float64).freeze()


class TestL1:
    def test_identity_is_zero(self):
        img = rand_image(np.random.default_rng(0))
        assert float(l1_loss(img, img)) == 0.0

    def test_constant_difference(self):
        a = Image(np.full((16, 16, 3), 0.3))
        b = Image(np.full((16, 16, 3), 0.5))
        assert float(l1_loss(a, b)) == pytest.approx(0.2, abs=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1, (4, 4, 3)), rng.uniform(0, 1, (4, 4, 3))
        expected = np.mean(np.abs(a - b))
        got = float(l1_loss(torch.tensor(a), torch.tensor(b)))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            l1_loss(torch.zeros(2, 3), torch.zeros(3, 2))


class TestContrastive:
    def test_symmetric_case(self, pyramid64):
        rng = np.random.default_rng(2)
        for _ in range(5):
            a = rand_image(rng)
            got = float(contrastive_loss(a, a, a, pyramid64))
            assert got == pytest.approx(SUM_W_LN2, abs=1e-9)

    def test_anchor_equals_positive_closed_form(self, pyramid64):
        rng = np.random.default_rng(3)
        a, n = rand_image(rng), rand_image(rng)
        cfg = ContrastiveConfig()
        fa = pyramid64.stages(image_to_tensor(a, torch.float64))
        fn = pyramid64.stages(image_to_tensor(n, torch.float64))
        d_neg = [float((x - y).abs().mean()) for x, y in zip(fa, fn)]
        expected = sum(w * math.log(1 + math.exp(-d / cfg.tau))
                       for w, d in zip(cfg.weights, d_neg))
        got = float(contrastive_loss(a, a, n, pyramid64, cfg))
        assert got == pytest.approx(expected, rel=1e-9)

    def test_always_positive(self, pyramid64):
        rng = np.random.default_rng(4)
        for _ in range(10):
            val = float(contrastive_loss(rand_image(rng), rand_image(rng),
                                         rand_image(rng), pyramid64))
            assert val > 0.0

    def test_monotone_in_negative_distance(self, pyramid64):
        # pull the negative away from the anchor along an interpolation path
        rng = np.random.default_rng(5)
        anchor = rand_image(rng)
        positive = rand_image(rng)
        far = Image(1.0 - anchor.pixels)
        vals = []
        for t in np.linspace(0.1, 1.0, 10):
            neg = Image(np.clip((1 - t) * anchor.pixels + t * far.pixels, 0, 1))
            vals.append(float(contrastive_loss(anchor, positive, neg, pyramid64)))
        assert all(v1 > v2 for v1, v2 in zip(vals, vals[1:]))

    def test_gradient_wrt_anchor(self, pyramid64):
        rng = np.random.default_rng(6)
        a, p, n = rand_image(rng), rand_image(rng), rand_image(rng)
        tp = image_to_tensor(p, torch.float64)
        tn = image_to_tensor(n, torch.float64)
        x = image_to_tensor(a, torch.float64)
        fd_input_check(lambda t: contrastive_loss(t, tp, tn, pyramid64), x, seed=6)

    def test_shape_mismatch(self, pyramid64):
        rng = np.random.default_rng(7)
        with pytest.raises(ShapeMismatchError):
            contrastive_loss(rand_image(rng, 16, 16), rand_image(rng, 16, 16),
                             rand_image(rng, 16, 20), pyramid64)


class TestSingleWeather:
    def test_beta1_zero_reduces_to_l1(self, tiny_model64, pyramid64):
        rng = np.random.default_rng(8)
        pair = SamplePair(rand_image(rng), rand_image(rng), 1)
        w = LossWeights(beta1=0.0)
        got = float(single_weather_loss(tiny_model64, pair, pyramid64, w))
        restored = tiny_model64(image_to_tensor(pair.degraded, torch.float64))
        expected = float(l1_loss(restored, image_to_tensor(pair.clean, torch.float64)))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_identity_model_degenerate_pair(self, tiny_model64, pyramid64):
        # fresh model is the identity; degraded == clean makes all three
        # contrastive points coincide
        img = rand_image(np.random.default_rng(9))
        pair = SamplePair(img, img, 1)
        got = float(single_weather_loss(tiny_model64, pair, pyramid64, LossWeights()))
        assert got == pytest.approx(0.8 * SUM_W_LN2, abs=1e-9)

    def test_matches_manual_composition(self, tiny_model64, pyramid64):
        rng = np.random.default_rng(10)
        pair = SamplePair(rand_image(rng), rand_image(rng), 1)
        w, cfg = LossWeights(), ContrastiveConfig()
        deg = image_to_tensor(pair.degraded, torch.float64)
        clean = image_to_tensor(pair.clean, torch.float64)
        restored = tiny_model64(deg)
        expected = float(l1_loss(restored, clean)) + w.beta1 * float(
            contrastive_loss(restored, clean, deg, pyramid64, cfg))
        got = float(single_weather_loss(tiny_model64, pair, pyramid64, w, cfg))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_gradient(self, tiny_model64, pyramid64):
        rng = np.random.default_rng(11)
        pair = SamplePair(rand_image(rng, 16, 16), rand_image(rng, 16, 16), 1)
        fd_param_check(
            lambda: single_weather_loss(tiny_model64, pair, pyramid64),
            tiny_model64, seed=11)


class TestKnowledgeReplay:
    def test_equal_models_closed_form(self, tiny_model64, old_model64, pyramid64):
        rng = np.random.default_rng(12)
        mem = rand_image(rng)
        cfg = ContrastiveConfig()
        w = LossWeights()
        x = image_to_tensor(mem, torch.float64)
        with torch.no_grad():
            out = old_model64(x)
        f_out = pyramid64.stages(out)
        f_mem = pyramid64.stages(x)
        d = [float((a - b).abs().mean()) for a, b in zip(f_out, f_mem)]
        expected = w.beta2 * sum(
            wl * math.log(1 + math.exp(-dl / cfg.tau))
            for wl, dl in zip(cfg.weights, d))
        got = float(knowledge_replay_loss(tiny_model64, old_model64, mem,
                                          pyramid64, w, cfg))
        assert got == pytest.approx(expected, rel=1e-9)

    def test_identity_old_model_symmetric_case(self, tiny_model64, old_model64,
                                               pyramid64):
        # fresh models are the identity, so output == input == memory image
        mem = rand_image(np.random.default_rng(13))
        got = float(knowledge_replay_loss(tiny_model64, old_model64, mem, pyramid64))
        assert got == pytest.approx(0.2 * SUM_W_LN2, abs=1e-9)

    def test_no_gradient_into_old_model(self, tiny_model64, old_model64, pyramid64):
        mem = rand_image(np.random.default_rng(14))
        with torch.no_grad():
            for p in tiny_model64.parameters():
                p.add_(torch.randn_like(p) * 0.01)
        loss = knowledge_replay_loss(tiny_model64, old_model64, mem, pyramid64)
        loss.backward()
        assert all(p.grad is None for p in old_model64.parameters())
        assert any(p.grad is not None and p.grad.abs().sum() > 0
                   for p in tiny_model64.parameters())

    def test_gradient(self, tiny_model64, old_model64, pyramid64):
        # perturb the new model away from the old one for a nonzero L1 term
        mem = rand_image(np.random.default_rng(15), 16, 16)
        with torch.no_grad():
            for p in tiny_model64.parameters():
                p.add_(torch.randn_like(p) * 0.01)
        fd_param_check(
            lambda: knowledge_replay_loss(tiny_model64, old_model64, mem, pyramid64),
            tiny_model64, seed=15)


class TestPrincipalKD:
    def test_equal_extractors_zero(self, tiny_model64, old_model64, projector64):
        mem = rand_image(np.random.default_rng(16))
        assert float(principal_kd_loss(tiny_model64, old_model64,
                                       projector64, mem)) == 0.0

    def test_perturbation_grows_continuously(self, tiny_model64, old_model64,
                                             projector64):
        mem = rand_image(np.random.default_rng(17))
        vals = []
        for eps in (1e-3, 2e-3, 4e-3, 8e-3):
            new = clone_model(tiny_model64)
            with torch.no_grad():
                new.pre.weight[0, 0, 0, 0] += eps
            vals.append(float(principal_kd_loss(new, old_model64, projector64, mem)))
        assert all(v > 0 for v in vals)
        assert all(v1 < v2 for v1, v2 in zip(vals, vals[1:]))

    def test_channel_mismatch_rejected(self, tiny_model64, old_model64):
        proj = build_projector(ProjectorConfig(in_channels=16, out_channels=4),
                               seed=0, dtype=torch.float64).freeze()
        with pytest.raises(InvalidArgumentError):
            principal_kd_loss(tiny_model64, old_model64, proj,
                              rand_image(np.random.default_rng(18)))

    def test_gradient(self, tiny_model64, old_model64, projector64):
        mem = rand_image(np.random.default_rng(19), 16, 16)
        with torch.no_grad():
            for p in tiny_model64.parameters():
                p.add_(torch.randn_like(p) * 0.01)
        fd_param_check(
            lambda: principal_kd_loss(tiny_model64, old_model64, projector64, mem),
            tiny_model64, seed=19)

    def test_frozen_paths_unchanged_by_training_step(self, tiny_model64,
                                                     old_model64, projector64,
                                                     pyramid64):
        rng = np.random.default_rng(20)
        pair = SamplePair(rand_image(rng), rand_image(rng), 1)
        mem = rand_image(rng)
        hashes = [param_hash(m) for m in (old_model64, projector64, pyramid64)]
        w = LossWeights()
        loss = total_loss(
            single_weather_loss(tiny_model64, pair, pyramid64, w),
            knowledge_replay_loss(tiny_model64, old_model64, mem, pyramid64, w),
            principal_kd_loss(tiny_model64, old_model64, projector64, mem), w)
        opt = torch.optim.Adam(tiny_model64.parameters(), lr=1e-3)
        opt.zero_grad()
        loss.backward()
        opt.step()
        assert [param_hash(m) for m in (old_model64, projector64, pyramid64)] == hashes


class TestTotal:
    def test_arithmetic(self):
        w = LossWeights(alpha=1.0, lam=0.3)
        assert float(total_loss(2.0, 1.0, 0.5, w)) == pytest.approx(3.15, abs=1e-12)

    def test_zero_weights_reduce_to_sw(self):
        w = LossWeights(alpha=0.0, lam=0.0)
        assert float(total_loss(1.7, 9.9, 4.2, w)) == pytest.approx(1.7, abs=1e-12)

    def test_random_triples_match_recompute(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            sw, kd, pkd = rng.uniform(0, 5, 3)
            a, lam = rng.uniform(0, 2, 2)
            w = LossWeights(alpha=a, lam=lam)
            assert float(total_loss(sw, kd, pkd, w)) == pytest.approx(
                sw + a * kd + lam * pkd, rel=1e-12)

    def test_non_finite_part_named(self):
        with pytest.raises(NumericError, match="l_kd"):
            total_loss(1.0, float("nan"), 0.0, LossWeights())
