"""Differentiable training objectives (PyTorch).

All functions take a single prediction map ``(H, W)`` unless noted and return
a scalar tensor. Teacher-side tensors are detached before use.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import torch
import torch.nn.functional as F

from .pairs import as_table, check_relations

DEFAULT_AUX_LAMBDAS = {0: (1.0,), 1: (0.5, 0.5), 2: (0.5, 0.25, 0.25)}


@dataclass(frozen=True)
class SICompositeConfig:
    a1: float = 0.5
    a2: float = 0.5
    scales: int = 3

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError("a1 and a2 must be non-negative")


@dataclass(frozen=True)
class AuxWeights:
    """Fixed per-head weights, final head first."""

    lambdas: tuple = (0.5, 0.25, 0.25)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        if not self.lambdas or any(not v > 0 for v in self.lambdas):
            raise ValueError("aux weights must be a non-empty list of positive reals")

    @classmethod
    def for_heads(cls, n_intermediate):
        if n_intermediate in DEFAULT_AUX_LAMBDAS:
            return cls(DEFAULT_AUX_LAMBDAS[n_intermediate])
        # half on the final head, the rest shared evenly
        rest = 0.5 / n_intermediate
        return cls((0.5,) + (rest,) * n_intermediate)


@dataclass(frozen=True)
class KDWeights:
    lambda_pixel: float = 1.0
    lambda_rank: float = 1.0
    lambda_pair: float = 1.0

    def __post_init__(self):
        for v in (self.lambda_pixel, self.lambda_rank, self.lambda_pair):
            if not (v >= 0 and v < float("inf")):
                raise ValueError("distillation weights must be finite and non-negative")


@dataclass
class LossReport:
    """Named loss components, the weights applied to them and their sum."""

    total: torch.Tensor
    components: Dict[str, torch.Tensor] = field(default_factory=dict)
    weights: Dict[str, float] = field(default_factory=dict)

    def values(self):
        return {k: float(v.detach()) for k, v in self.components.items()}


def softplus_stable(x):
    """``log(1 + exp(x))`` without overflow for large ``x``."""
    return torch.logaddexp(torch.zeros_like(x), x)


def _gather(z, table):
    device = z.device
    ar = torch.as_tensor(table.a_row, device=device)
    ac = torch.as_tensor(table.a_col, device=device)
    br = torch.as_tensor(table.b_row, device=device)
    bc = torch.as_tensor(table.b_col, device=device)
    return z[ar, ac], z[br, bc]


def ranking_loss(z, pairs):
    """Mean ordinal ranking loss over pairs of a closeness map ``z``."""
    table = as_table(pairs)
    if len(table) == 0:
        raise ValueError("ranking loss needs at least one pair")
    check_relations(table)
    z_i, z_j = _gather(z, table)
    rel = torch.as_tensor(table.relation, device=z.device)
    diff = z_i - z_j
    # r=1: softplus(z_j - z_i); r=-1: softplus(z_i - z_j)
    ordinal = softplus_stable(-rel.to(z.dtype) * diff)
    per_pair = torch.where(rel == 0, diff * diff, ordinal)
    return per_pair.mean()


def improved_ranking_loss(z, pairs):
    """Ranking loss where the relation field carries a real-valued label ``l``."""
    table = as_table(pairs)
    if len(table) == 0:
        raise ValueError("ranking loss needs at least one pair")
    z_i, z_j = _gather(z, table)
    label = torch.as_tensor(table.relation, device=z.device).to(z.dtype)
    diff = z_i - z_j
    per_pair = torch.where(label == 0, diff * diff, softplus_stable(-diff * label))
    return per_pair.mean()


def _grad_xy(t):
    return t[..., :, 1:] - t[..., :, :-1], t[..., 1:, :] - t[..., :-1, :]


def _pyramid(t, scales):
    out = [t]
    for _ in range(scales - 1):
        t = out[-1]
        if min(t.shape[-2:]) < 4:  # next level would have no gradients
            break
        out.append(F.avg_pool2d(t[None, None], 2)[0, 0])
    return out


def si_composite_loss(pred, gt, image, cfg=None):
    """Scale-invariant MSE plus multi-scale gradient and edge-aware smoothness.

    ``pred`` and ``gt`` are positive depth-like maps ``(H, W)``; ``image`` is
    ``(H, W, 3)``. Returns ``(total, {"mse", "grad", "smooth"})``.
    """
    cfg = cfg or SICompositeConfig()
    gt = torch.as_tensor(gt, dtype=pred.dtype, device=pred.device)
    if torch.any(gt <= 0):
        raise ValueError("ground-truth depth must be positive")
    image = torch.as_tensor(image, dtype=pred.dtype, device=pred.device)
    if pred.shape != gt.shape or tuple(image.shape[:2]) != tuple(pred.shape):
        raise ValueError("pred, gt and image must be spatially aligned")

    log_pred = torch.log(pred)
    d = log_pred - torch.log(gt)
    l_mse = (d * d).mean() - d.mean() ** 2

    l_grad = pred.new_zeros(())
    for ds in _pyramid(d, cfg.scales):
        gx, gy = _grad_xy(ds)
        l_grad = l_grad + gx.abs().mean() + gy.abs().mean()

    intensity = image.mean(dim=-1)
    l_sm = pred.new_zeros(())
    for lp, im in zip(_pyramid(log_pred, cfg.scales), _pyramid(intensity, cfg.scales)):
        px, py = _grad_xy(lp)
        ix, iy = _grad_xy(im)
        l_sm = l_sm + (px.abs() * torch.exp(-ix.abs())).mean() + (py.abs() * torch.exp(-iy.abs())).mean()

    total = l_mse + cfg.a1 * l_grad + cfg.a2 * l_sm
    return total, {"mse": l_mse, "grad": l_grad, "smooth": l_sm}


def aux_combine(losses: Sequence[torch.Tensor], weights: AuxWeights):
    if len(losses) != len(weights.lambdas):
        raise ValueError(f"{len(losses)} losses but {len(weights.lambdas)} aux weights")
    total = None
    for lam, loss in zip(weights.lambdas, losses):
        term = lam * loss
        total = term if total is None else total + term
    return total


def _rmse(a, b):
    mse = ((a - b) ** 2).mean()
    # sqrt has an infinite slope at 0; mask keeps the gradient finite there
    return mse.clamp_min(1e-30).sqrt() * (mse > 0)


def pixelwise_distill_loss(student_preds: List[torch.Tensor], teacher_pred, weights: AuxWeights):
    teacher = torch.as_tensor(teacher_pred).detach()
    per_head = []
    for s in student_preds:
        if s.shape != teacher.shape:
            raise ValueError(f"student head {tuple(s.shape)} vs teacher {tuple(teacher.shape)}")
        per_head.append(_rmse(s, teacher.to(s.dtype)))
    return aux_combine(per_head, weights)


def affinity_matrix(feat, grid, eps=1e-12):
    """Cosine-similarity matrix over ``grid x grid`` pooled cells.

    ``feat`` is ``(C, h, w)`` or ``(B, C, h, w)``; returns ``(B, g*g, g*g)``.
    """
    if feat.dim() == 3:
        feat = feat[None]
    pooled = F.adaptive_avg_pool2d(feat, grid).flatten(2)
    pooled = F.normalize(pooled, p=2, dim=1, eps=eps)
    return pooled.transpose(1, 2) @ pooled


def pairwise_affinity_loss(student_feat, teacher_feat, grid=8):
    if grid < 2:
        raise ValueError("affinity grid must be >= 2")
    for name, f in (("student", student_feat), ("teacher", teacher_feat)):
        if min(f.shape[-2:]) < grid:
            raise ValueError(f"{name} features {tuple(f.shape)} cannot be pooled to {grid}x{grid}")
    a_s = affinity_matrix(student_feat, grid)
    a_t = affinity_matrix(torch.as_tensor(teacher_feat).detach().to(a_s.dtype), grid)
    return ((a_s - a_t) ** 2).mean()
