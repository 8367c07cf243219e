"""Training objectives: ID cross-entropy, triplet, color MSE, disentanglement, motion."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor

IMAGE_TERMS = ("ce", "triplet", "mse", "de")
VIDEO_TERMS = ("ce", "triplet", "ml")


@dataclass(frozen=True)
class LossConfig:
    triplet_margin: float = 0.3
    motion_eps: float = 1e-4
    w_ce: float = 1.0
    w_triplet: float = 1.0
    w_mse: float = 1.0
    w_de: float = 1.0
    w_ml: float = 1.0

    def __post_init__(self):
        if self.triplet_margin < 0:
            raise ValueError("triplet_margin must be >= 0")
        if not self.motion_eps > 0:
            raise ValueError("motion_eps must be > 0")
        for name in ("w_ce", "w_triplet", "w_mse", "w_de", "w_ml"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def weight(self, term: str) -> float:
        return getattr(self, f"w_{term}")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """``-log softmax(logits)[label]``, averaged over the batch for 2-D logits."""
    labels = torch.as_tensor(labels, device=logits.device)
    C = logits.shape[-1]
    if bool((labels < 0).any()) or bool((labels >= C).any()):
        raise ValueError(f"label out of range for {C} classes")
    if logits.dim() == 1:
        return -F.log_softmax(logits, dim=-1)[labels]
    return F.cross_entropy(logits, labels.long())


def _safe_sqrt(sq: Tensor) -> Tensor:
    # zero subgradient where the distance vanishes
    pos = sq > 0
    return torch.where(pos, sq, torch.ones_like(sq)).sqrt() * pos


def euclidean(a: Tensor, b: Tensor) -> Tensor:
    return _safe_sqrt(((a - b) ** 2).sum(-1))


def pairwise_euclidean(x: Tensor) -> Tensor:
    diff = x[:, None, :] - x[None, :, :]
    return _safe_sqrt((diff**2).sum(-1))


def triplet(anchor: Tensor, positive: Tensor, negative: Tensor, margin: float = 0.3) -> Tensor:
    if not anchor.shape == positive.shape == negative.shape:
        raise ValueError("triplet inputs must have equal shapes")
    return F.relu(margin + euclidean(anchor, positive) - euclidean(anchor, negative))


def batch_hard_triplet(features: Tensor, labels, margin: float = 0.3) -> Tensor:
    """Mean over anchors of the triplet loss with the farthest positive and closest negative.

    Anchors whose identity has a single sample in the batch are skipped.
    """
    labels = torch.as_tensor(labels, device=features.device)
    N = features.shape[0]
    dist = pairwise_euclidean(features)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(N, dtype=torch.bool, device=features.device)
    pos_mask = same & ~eye
    neg_mask = ~same
    valid = pos_mask.any(1) & neg_mask.any(1)
    if not bool(valid.any()):
        raise ValueError("degenerate batch")
    hardest_pos = dist.masked_fill(~pos_mask, float("-inf")).max(1).values
    hardest_neg = dist.masked_fill(~neg_mask, float("inf")).min(1).values
    losses = F.relu(margin + hardest_pos[valid] - hardest_neg[valid])
    return losses.mean()


def disentangle(f_co: Tensor, f_reid: Tensor) -> Tensor:
    """Absolute cosine similarity between Color and ReID features (batch mean)."""
    if f_co.shape != f_reid.shape:
        raise ValueError("feature shapes differ")
    n_co = f_co.norm(dim=-1)
    n_id = f_reid.norm(dim=-1)
    if bool((n_co == 0).any()) or bool((n_id == 0).any()):
        raise ValueError("zero-norm feature")
    cos = (f_co * f_reid).sum(-1) / (n_co * n_id)
    return cos.abs().mean()


def mse_color(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"dimension mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def motion_terms(frame_feats: Tensor) -> tuple[Tensor, Tensor]:
    """Scalar consecutive-frame difference and cross-frame variance.

    ``frame_feats`` is ``(n, d)`` or ``(B, n, d)``; results are averaged over
    the batch.
    """
    if frame_feats.dim() == 2:
        frame_feats = frame_feats[None]
    if frame_feats.shape[1] < 2:
        raise ValueError("motion loss needs at least 2 frames")
    diff = (frame_feats[:, 1:] - frame_feats[:, :-1]).abs().mean(dim=(1, 2))
    var = frame_feats.var(dim=1, unbiased=False).mean(dim=1)
    return diff.mean(), var.mean()


def motion_loss(frame_feats: Tensor, eps: float = 1e-4) -> Tensor:
    c, v = motion_terms(frame_feats)
    return 1.0 / (c + v + eps)


def total_objective(terms: dict[str, Tensor], cfg: LossConfig = LossConfig(),
                    mode: str = "image") -> Tensor:
    """Weighted sum of the loss terms active in ``mode`` ("image" or "video")."""
    if mode not in ("image", "video"):
        raise ValueError(f"unknown mode {mode!r}")
    active = IMAGE_TERMS if mode == "image" else VIDEO_TERMS
    total = None
    for name in active:
        if name not in terms:
            continue
        part = cfg.weight(name) * terms[name]
        total = part if total is None else total + part
    if total is None:
        return torch.zeros(())
    return total
