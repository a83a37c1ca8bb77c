import numpy as np
import pytest
import torch

from clearsky.backbone import BackboneConfig, build_model
from clearsky.imaging import Image
from clearsky.perceptual import PerceptualPyramid


def rand_image(rng: np.random.Generator, h: int = 24, w: int = 24) -> Image:
    return Image(rng.uniform(0.0, 1.0, size=(h, w, 3)))


@pytest.fixture(scope="session")
def pyramid64():
    return PerceptualPyramid(seed=3, dtype=torch.float64)


@pytest.fixture()
def tiny_model64():
    return build_model(BackboneConfig(base_channels=8, num_groups=1,
                                      blocks_per_group=1), seed=1,
                       dtype=torch.float64)


def fd_param_check(loss_fn, model, n_coords=10, h=1e-6, rel_tol=1e-4, seed=0):
    """Central finite differences on random parameter coordinates vs autograd."""
    rng = np.random.default_rng(seed)
    model.zero_grad()
    loss = loss_fn()
    loss.backward()
    params = [p for p in model.parameters() if p.requires_grad]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    worst = 0.0
    for _ in range(n_coords):
        flat = int(rng.integers(total))
        pi = 0
        while flat >= sizes[pi]:
            flat -= sizes[pi]
            pi += 1
        p = params[pi]
        g = 0.0 if p.grad is None else float(p.grad.view(-1)[flat])
        with torch.no_grad():
            orig = float(p.view(-1)[flat])
            p.view(-1)[flat] = orig + h
            f_plus = float(loss_fn().detach())
            p.view(-1)[flat] = orig - h
            f_minus = float(loss_fn().detach())
            p.view(-1)[flat] = orig
        fd = (f_plus - f_minus) / (2 * h)
        rel = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
        worst = max(worst, rel)
    assert worst <= rel_tol, f"worst relative gradient error {worst:.3e}"
    return worst


def fd_input_check(loss_fn, x: torch.Tensor, n_coords=10, h=1e-6,
                   rel_tol=1e-4, seed=0):
    """Central finite differences on random input coordinates vs autograd."""
    rng = np.random.default_rng(seed)
    x.requires_grad_(True)
    if x.grad is not None:
        x.grad = None
    loss = loss_fn(x)
    loss.backward()
    worst = 0.0
    for _ in range(n_coords):
        flat = int(rng.integers(x.numel()))
        g = float(x.grad.view(-1)[flat])
        with torch.no_grad():
            orig = float(x.view(-1)[flat])
            x.view(-1)[flat] = orig + h
            f_plus = float(loss_fn(x).detach())
            x.view(-1)[flat] = orig - h
            f_minus = float(loss_fn(x).detach())
            x.view(-1)[flat] = orig
        fd = (f_plus - f_minus) / (2 * h)
        rel = abs(fd - g) / max(abs(fd), abs(g), 1e-8)
        worst = max(worst, rel)
    assert worst <= rel_tol, f"worst relative input-gradient error {worst:.3e}"
    return worst
