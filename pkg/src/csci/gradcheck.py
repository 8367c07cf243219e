"""Central finite-difference checks of the analytic and autograd gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .attention import AttentionVariant, Block
from .color import ColorHistConfig, rgbuv_gradient, rgbuv_histogram
from .losses import (LossConfig, batch_hard_triplet, cross_entropy, disentangle, motion_loss,
                     mse_color, total_objective)
from .model import CsciModel, ModelConfig, image_loss_terms


@dataclass
class CheckReport:
    name: str
    trials: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def to_dict(self) -> dict:
        return {"check": self.name, "trials": self.trials, "max_rel_error": self.max_rel_error,
                "tolerance": self.tolerance, "passed": self.passed}


def rel_error(analytic, numeric) -> float:
    a = np.ravel(np.asarray(analytic, dtype=np.float64))
    n = np.ravel(np.asarray(numeric, dtype=np.float64))
    denom = max(np.linalg.norm(n), np.linalg.norm(a), 1e-300)
    return float(np.linalg.norm(a - n) / denom)


def check_color(trials: int = 50, seed: int = 0, size: int = 4, step: float = 1e-4,
                cfg: ColorHistConfig | None = None, tolerance: float = 1e-5) -> CheckReport:
    """``rgbuv_gradient`` against central differences on random images."""
    cfg = cfg or ColorHistConfig(bins=8, tau=0.02)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        # keep channels away from 0 and 255 so the +-step stays in range
        img = rng.uniform(1.0, 254.0, (size, size, 3))
        up = rng.normal(size=3 * cfg.bins**2)
        grad = rgbuv_gradient(img, cfg, up)
        fd = np.zeros_like(img)
        for idx in np.ndindex(img.shape):
            hi, lo = img.copy(), img.copy()
            hi[idx] += step
            lo[idx] -= step
            fd[idx] = (up @ rgbuv_histogram(hi, cfg).values - up @ rgbuv_histogram(lo, cfg).values) / (2 * step)
        worst = max(worst, rel_error(grad, fd))
    return CheckReport("color", trials, worst, tolerance)


def _fd_scalar(fn, tensor: torch.Tensor, index, step: float) -> float:
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + step
        hi = fn().item()
        tensor[index] = orig - step
        lo = fn().item()
        tensor[index] = orig
    return (hi - lo) / (2 * step)


def tiny_model_config(seed: int = 0, variant=AttentionVariant.S2A, color_dim: int = 12) -> ModelConfig:
    return ModelConfig(image_size=28, patch_size=14, dim=16, heads=2, depth=2, num_classes=4,
                       color_dim=color_dim, variant=variant, n_frames=2, seed=seed)


def check_model(trials: int = 50, seed: int = 0, n_params: int = 10, step: float = 1e-6,
                tolerance: float = 1e-4) -> CheckReport:
    """Autograd gradient of the full image objective vs FD on random parameter entries."""
    rng = np.random.default_rng(seed)
    loss_cfg = LossConfig()
    worst = 0.0
    for t in range(trials):
        cfg = tiny_model_config(seed + t)
        model = CsciModel(cfg).double()
        # break the near-zero init so every term has a sizeable gradient
        with torch.no_grad():
            for p in model.parameters():
                p.add_(torch.from_numpy(rng.normal(0, 0.05, p.shape)))
        images = rng.uniform(0, 255, (8, cfg.image_size, cfg.image_size, 3))
        labels = np.repeat(np.arange(4), 2)
        targets = rng.normal(size=(8, cfg.color_dim))

        def loss():
            return total_objective(image_loss_terms(model, images, labels, targets, loss_cfg), loss_cfg)

        model.zero_grad()
        loss().backward()
        # temporal tokens are unused on the image path
        params = [p for p in model.parameters() if p.grad is not None]
        analytic, numeric = [], []
        for _ in range(n_params):
            p = params[rng.integers(len(params))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic.append(p.grad[idx].item())
            numeric.append(_fd_scalar(loss, p.data, idx, step))
        worst = max(worst, rel_error(analytic, numeric))
    return CheckReport("model", trials, worst, tolerance)


def _check_autograd(name, fn, inputs, rng, trials, step, tolerance) -> CheckReport:
    worst = 0.0
    for _ in range(trials):
        xs = [torch.tensor(make(rng), dtype=torch.float64, requires_grad=True) for make in inputs]
        out = fn(*xs)
        grads = torch.autograd.grad(out, xs)
        for x, g in zip(xs, grads):
            fd = np.zeros(x.shape)
            for idx in np.ndindex(*x.shape):
                fd[idx] = _fd_scalar(lambda: fn(*xs), x.data, idx, step)
            worst = max(worst, rel_error(g.numpy(), fd))
    return CheckReport(name, trials, worst, tolerance)


def check_losses(trials: int = 20, seed: int = 0, step: float = 1e-6, tolerance: float = 1e-5) -> list[CheckReport]:
    rng = np.random.default_rng(seed)
    labels = np.array([0, 0, 1, 1, 2, 2])
    cfg = LossConfig()
    checks = [
        ("cross_entropy", lambda z: cross_entropy(z, torch.tensor([1, 0, 3])), [lambda r: r.normal(size=(3, 5))]),
        ("batch_hard_triplet", lambda f: batch_hard_triplet(f, labels, 0.3), [lambda r: r.normal(size=(6, 4))]),
        ("disentangle", disentangle, [lambda r: r.normal(size=(3, 5)), lambda r: r.normal(size=(3, 5))]),
        ("mse_color", mse_color, [lambda r: r.normal(size=7), lambda r: r.normal(size=7)]),
        ("motion_loss", lambda f: motion_loss(f, cfg.motion_eps), [lambda r: r.normal(size=(4, 5))]),
        ("total_objective",
         lambda a, b: total_objective({"ce": cross_entropy(a, torch.tensor([1, 2])), "mse": mse_color(a, b),
                                       "de": disentangle(a, b)}, LossConfig(w_ce=0.5, w_mse=2.0)),
         [lambda r: r.normal(size=(2, 4)), lambda r: r.normal(size=(2, 4))]),
    ]
    return [_check_autograd(name, fn, ins, rng, trials, step, tolerance) for name, fn, ins in checks]


def check_block(trials: int = 20, seed: int = 0, step: float = 1e-6, tolerance: float = 1e-5) -> list[CheckReport]:
    """Jacobian-vector products of a block forward pass against FD, per variant."""
    rng = np.random.default_rng(seed)
    reports = []
    for variant in AttentionVariant:
        worst = 0.0
        for t in range(trials):
            torch.manual_seed(seed + t)
            block = Block(8, 2).double()
            x = torch.from_numpy(rng.normal(size=(2, 5, 8)))
            v = torch.from_numpy(rng.normal(size=(2, 5, 8)))
            _, jvp = torch.func.jvp(lambda z: block(z, variant), (x,), (v,))
            with torch.no_grad():
                fd = (block(x + step * v, variant) - block(x - step * v, variant)) / (2 * step)
            worst = max(worst, rel_error(jvp.detach().numpy(), fd.numpy()))
        reports.append(CheckReport(f"block_{variant.value}", trials, worst, tolerance))
    return reports


def run(module: str, trials: int | None = None, seed: int = 0) -> list[CheckReport]:
    if module == "color":
        return [check_color(trials or 50, seed)]
    if module == "model":
        return [check_model(trials or 50, seed)]
    if module == "losses":
        return check_losses(trials or 20, seed)
    if module == "attention":
        return check_block(trials or 20, seed)
    if module == "all":
        return [*run("color", trials, seed), *run("losses", trials, seed),
                *run("attention", trials, seed), *run("model", trials, seed)]
    raise ValueError(f"unknown gradcheck module {module!r}")
