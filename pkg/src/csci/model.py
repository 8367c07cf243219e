"""Desk-scale encoder with ReID and Color head tokens, plus the temporal-token video path."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
from torch import Tensor, nn

from .attention import CO, AttentionVariant, Block
from .losses import (LossConfig, batch_hard_triplet, cross_entropy, disentangle, motion_loss,
                     mse_color, total_objective)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 56
    patch_size: int = 7
    dim: int = 64
    heads: int = 4
    depth: int = 2
    num_classes: int = 10
    color_dim: int = 1024
    variant: AttentionVariant = AttentionVariant.S2A
    mlp_ratio: float = 4.0
    n_frames: int = 4
    use_color: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", AttentionVariant(self.variant))
        if self.image_size % self.patch_size:
            raise ValueError("patch_size must divide image_size")
        if self.dim % self.heads:
            raise ValueError("heads must divide dim")
        if min(self.num_classes, self.color_dim, self.depth, self.n_frames) < 1:
            raise ValueError("num_classes, color_dim, depth and n_frames must be positive")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d


class ForwardOutput(NamedTuple):
    f_reid: Tensor
    f_co: Tensor | None
    logits: Tensor
    color_pred: Tensor | None


def extract_patches(images: Tensor, patch: int) -> Tensor:
    """``(B, H, W, 3)`` -> ``(B, N, patch*patch*3)`` in row-major patch order."""
    B, H, W, C = images.shape
    x = images.reshape(B, H // patch, patch, W // patch, patch, C)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, (H // patch) * (W // patch), patch * patch * C)


class CsciModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.patch_embed = nn.Linear(3 * cfg.patch_size**2, d)
            self.reid_token = nn.Parameter(torch.empty(d))
            self.pos_embed = nn.Parameter(torch.empty(cfg.num_patches + 1, d))
            if cfg.use_color:
                self.color_token = nn.Parameter(torch.empty(d))
                self.color_pos = nn.Parameter(torch.empty(d))
            self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth))
            self.norm = nn.LayerNorm(d, eps=1e-6)
            self.classifier = nn.Linear(d, cfg.num_classes)
            if cfg.use_color:
                self.color_head = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, cfg.color_dim))
            self.temporal_tokens = nn.Parameter(torch.empty(cfg.n_frames, d))
            self.temporal_pos = nn.Parameter(torch.empty(cfg.n_frames, d))
            self._init_weights()

    def _init_weights(self):
        for p in (self.reid_token, self.pos_embed, self.temporal_tokens, self.temporal_pos):
            nn.init.trunc_normal_(p, std=0.02)
        if self.cfg.use_color:
            nn.init.trunc_normal_(self.color_token, std=0.02)
            nn.init.trunc_normal_(self.color_pos, std=0.02)
        # linear layers keep the PyTorch default (Kaiming-uniform) init

    @property
    def dtype(self) -> torch.dtype:
        return self.pos_embed.dtype

    def _as_images(self, images) -> Tensor:
        x = torch.as_tensor(np.asarray(images) if not isinstance(images, Tensor) else images)
        x = x.to(self.dtype)
        s = self.cfg.image_size
        if x.dim() == 3:
            x = x[None]
        if x.shape[-3:] != (s, s, 3):
            raise ValueError(f"expected {s}x{s}x3 images, got {tuple(x.shape[-3:])}")
        return x

    def patchify(self, images) -> Tensor:
        # pixels are centered to [-1, 1]; uncentered input collapses the ReID features
        x = self._as_images(images) / 127.5 - 1.0
        return self.patch_embed(extract_patches(x, self.cfg.patch_size))

    def tokens(self, images, with_color: bool = True) -> Tensor:
        sp = self.patchify(images) + self.pos_embed[1:]
        B = sp.shape[0]
        rows = [(self.reid_token + self.pos_embed[0]).expand(B, 1, -1), sp]
        if with_color:
            rows.insert(0, (self.color_token + self.color_pos).expand(B, 1, -1))
        return torch.cat(rows, dim=1)

    def encode(self, x: Tensor, with_color: bool) -> Tensor:
        for blk in self.blocks:
            x = blk(x, self.cfg.variant, has_color=with_color)
        return self.norm(x)

    def forward_image(self, images, with_color: bool | None = None) -> ForwardOutput:
        if with_color is None:
            with_color = self.cfg.use_color
        if with_color and not self.cfg.use_color:
            raise ValueError("model was built without a Color token")
        x = self.encode(self.tokens(images, with_color), with_color)
        if not torch.isfinite(x).all():
            raise FloatingPointError("numerical blowup")
        if with_color:
            f_co, f_reid = x[:, CO], x[:, CO + 1]
            return ForwardOutput(f_reid, f_co, self.classifier(f_reid), self.color_head(f_co))
        f_reid = x[:, 0]
        return ForwardOutput(f_reid, None, self.classifier(f_reid), None)

    forward = forward_image

    def forward_video(self, frames, return_frames: bool = False):
        """Clip-level ReID feature for ``(B, n_frames, H, W, 3)`` input.

        In every block the temporal token of frame ``t`` is added to the mean of
        that frame's spatial tokens, the temporal tokens attend to each other
        with the block's attention weights, and each frame then runs the block
        with its temporal token appended. The Color token is not used.
        """
        x = torch.as_tensor(np.asarray(frames) if not isinstance(frames, Tensor) else frames)
        if x.dim() == 4:
            x = x[None]
        B, n = x.shape[:2]
        if n != self.cfg.n_frames:
            raise ValueError(f"expected {self.cfg.n_frames} frames, got {n}")
        sp = self.patchify(x.reshape(B * n, *x.shape[2:])) + self.pos_embed[1:]
        sp = sp + self.temporal_pos.repeat(B, 1)[:, None, :]
        cls = (self.reid_token + self.pos_embed[0]).expand(B * n, 1, -1)
        h = torch.cat([cls, sp], dim=1)
        d = self.cfg.dim
        for blk in self.blocks:
            tt = self.temporal_tokens[None] + h[:, 1:].mean(1).view(B, n, d)
            tt = tt + blk.attend(blk.norm1(tt), AttentionVariant.TRADITIONAL, has_color=False)
            h = torch.cat([h, tt.reshape(B * n, 1, d)], dim=1)
            h = blk(h, AttentionVariant.TRADITIONAL, has_color=False)[:, :-1]
        h = self.norm(h)
        if not torch.isfinite(h).all():
            raise FloatingPointError("numerical blowup")
        per_frame = h[:, 0].view(B, n, d)
        f_reid = per_frame.mean(1)
        return (f_reid, per_frame) if return_frames else f_reid


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def color_head_parameters(dim: int, color_dim: int) -> int:
    return dim * dim + dim + dim * color_dim + color_dim


def parameter_overhead(cfg: ModelConfig) -> dict:
    """Parameter count of the Color-token model against the same config without it."""
    from dataclasses import replace

    with_color = count_parameters(CsciModel(replace(cfg, use_color=True)))
    baseline = count_parameters(CsciModel(replace(cfg, use_color=False)))
    expected = 2 * cfg.dim + color_head_parameters(cfg.dim, cfg.color_dim)
    return {
        "csci": with_color,
        "baseline": baseline,
        "delta": with_color - baseline,
        "expected_delta": expected,
        "overhead_pct": 100.0 * (with_color - baseline) / baseline,
    }


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    epochs: int = 30
    P: int = 4
    K: int = 2
    seed: int = 0
    weight_decay: float = 0.0
    video: bool = False


def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def pk_batches(labels, P: int, K: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of P-identities x K-instances batches.

    Identities with fewer than ``K`` samples are drawn with replacement; the
    last group of fewer than ``P`` identities is dropped.
    """
    labels = np.asarray(labels)
    ids = np.unique(labels)
    if len(ids) < 2:
        raise ValueError("PK sampling needs at least 2 identities")
    P = min(P, len(ids))
    pools = {}
    for i in ids:
        members = rng.permutation(np.flatnonzero(labels == i))
        if len(members) < K:
            members = rng.choice(members, size=K, replace=True)
        pools[i] = [members[j:j + K] for j in range(0, len(members) - K + 1, K)]
    order = []
    # each round takes one K-chunk from P distinct identities
    while any(pools.values()):
        avail = [i for i in ids if pools[i]]
        if len(avail) < P:
            break
        for i in rng.permutation(avail)[:P]:
            order.append(pools[i].pop())
    batches = [np.concatenate(order[j:j + P]) for j in range(0, len(order) - P + 1, P)]
    return batches


def image_loss_terms(model: CsciModel, images, labels, targets, loss_cfg: LossConfig) -> dict[str, Tensor]:
    out = model.forward_image(images)
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    terms = {
        "ce": cross_entropy(out.logits, labels_t),
        "triplet": batch_hard_triplet(out.f_reid, labels_t, loss_cfg.triplet_margin),
    }
    if out.f_co is not None:
        tgt = torch.as_tensor(np.asarray(targets), dtype=model.dtype)
        terms["mse"] = mse_color(out.color_pred, tgt)
        terms["de"] = disentangle(out.f_co, out.f_reid)
    return terms


def video_loss_terms(model: CsciModel, clips, labels, loss_cfg: LossConfig) -> dict[str, Tensor]:
    f_reid, per_frame = model.forward_video(clips, return_frames=True)
    labels_t = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    return {
        "ce": cross_entropy(model.classifier(f_reid), labels_t),
        "triplet": batch_hard_triplet(f_reid, labels_t, loss_cfg.triplet_margin),
        "ml": motion_loss(per_frame, loss_cfg.motion_eps),
    }


def train_step_image(model: CsciModel, optimizer: torch.optim.Optimizer, images, labels, targets,
                     loss_cfg: LossConfig = LossConfig()) -> dict[str, float]:
    model.train()
    optimizer.zero_grad()
    terms = image_loss_terms(model, images, labels, targets, loss_cfg)
    loss = total_objective(terms, loss_cfg, mode="image")
    loss.backward()
    optimizer.step()
    return {"loss": loss.item(), **{k: v.item() for k, v in terms.items()}}


def train_step_video(model: CsciModel, optimizer: torch.optim.Optimizer, clips, labels,
                     loss_cfg: LossConfig = LossConfig()) -> dict[str, float]:
    model.train()
    optimizer.zero_grad()
    terms = video_loss_terms(model, clips, labels, loss_cfg)
    loss = total_objective(terms, loss_cfg, mode="video")
    loss.backward()
    optimizer.step()
    return {"loss": loss.item(), **{k: v.item() for k, v in terms.items()}}


def _mean_logs(logs: list[dict[str, float]]) -> dict[str, float]:
    keys = sorted({k for log in logs for k in log})
    return {k: float(np.mean([log.get(k, 0.0) for log in logs])) for k in keys}


def _image_epoch(model, optimizer, images, labels, targets, cfg: TrainConfig, loss_cfg, rng, log=None):
    logs = []
    for idx in pk_batches(labels, cfg.P, cfg.K, rng):
        tgt = None if targets is None else targets[idx]
        logs.append(train_step_image(model, optimizer, images[idx], labels[idx], tgt, loss_cfg))
        if log is not None:
            log({"step": len(logs), **logs[-1]})
    return _mean_logs(logs)


def train_image(model: CsciModel, images, labels, targets, cfg: TrainConfig = TrainConfig(),
                loss_cfg: LossConfig = LossConfig(), log=None) -> list[dict]:
    """Train on images; returns per-epoch mean loss terms."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if len(images) == 0:
        raise ValueError("empty dataset")
    targets = None if targets is None else np.asarray(targets)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model, cfg)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        stats = _image_epoch(model, opt, images, labels, targets, cfg, loss_cfg, rng)
        history.append({"epoch": epoch, "step_type": "image", **stats})
        if log is not None:
            log(history[-1])
    return history


def sample_clip_indices(length: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform temporal stride with a random offset; with replacement for short tracklets."""
    if length <= 0:
        raise ValueError("empty tracklet")
    if length < n:
        return np.sort(rng.choice(length, size=n, replace=True))
    stride = length // n
    offset = int(rng.integers(0, length - stride * (n - 1)))
    return offset + stride * np.arange(n)


def schedule(epochs: int, alternate: bool = True) -> list[str]:
    if not alternate:
        return ["image"] * epochs
    return ["video" if e % 2 == 1 else "image" for e in range(1, epochs + 1)]


def middle_frames(tracklets) -> np.ndarray:
    return np.stack([np.asarray(t)[len(t) // 2] for t in tracklets])


def train_alternating_video(model: CsciModel, tracklets, labels, targets,
                            cfg: TrainConfig = TrainConfig(), loss_cfg: LossConfig = LossConfig(),
                            alternate: bool = True, log=None) -> list[dict]:
    """Alternate video epochs (temporal tokens, no Color token) with image epochs.

    ``tracklets`` is a sequence of ``(L_i, H, W, 3)`` frame arrays; ``targets``
    holds the color vector of each tracklet's middle frame, which is also the
    frame used on image epochs.
    """
    if len(tracklets) == 0:
        raise ValueError("empty dataset")
    labels = np.asarray(labels)
    targets = None if targets is None else np.asarray(targets)
    mids = middle_frames(tracklets)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model, cfg)
    n = model.cfg.n_frames
    history = []
    for epoch, kind in enumerate(schedule(cfg.epochs, alternate), start=1):
        if kind == "image":
            stats = _image_epoch(model, opt, mids, labels, targets, cfg, loss_cfg, rng)
            stats.setdefault("ml", 0.0)
        else:
            logs = []
            for idx in pk_batches(labels, cfg.P, cfg.K, rng):
                clips = np.stack([np.asarray(tracklets[i])[sample_clip_indices(len(tracklets[i]), n, rng)]
                                  for i in idx])
                logs.append(train_step_video(model, opt, clips, labels[idx], loss_cfg))
            stats = _mean_logs(logs)
        history.append({"epoch": epoch, "step_type": kind, **stats})
        if log is not None:
            log(history[-1])
    return history


@torch.no_grad()
def extract_features(model: CsciModel, images, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray | None]:
    """``(f_reid, f_co)`` as float64 arrays; ``f_co`` is None without a Color token."""
    model.eval()
    images = np.asarray(images)
    reid, co = [], []
    for i in range(0, len(images), batch_size):
        out = model.forward_image(images[i:i + batch_size])
        reid.append(out.f_reid.double().numpy())
        if out.f_co is not None:
            co.append(out.f_co.double().numpy())
    f_reid = np.concatenate(reid) if reid else np.zeros((0, model.cfg.dim))
    return f_reid, (np.concatenate(co) if co else None)
