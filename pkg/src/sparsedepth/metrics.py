"""Evaluation metrics: WHDR, RMSE, delta accuracy and scale-invariant RMSE.

Predictions handed to :func:`whdr` are closeness scores (higher = nearer).
The depth metrics take positive depth-like arrays; use
:func:`align_scores_to_depth` to turn closeness scores into depth first.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedMetricError
from .pairs import as_table, check_in_bounds, check_relations


@dataclass(frozen=True)
class MetricConfig:
    whdr_equality_tolerance: float = 0.0
    delta_threshold: float = 1.25
    log_epsilon: float = 1e-8

    def __post_init__(self):
        if not self.delta_threshold > 1:
            raise ValueError("delta_threshold must exceed 1")
        for name in ("whdr_equality_tolerance", "log_epsilon"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative")


def predicted_relation(z_a, z_b, tolerance=0.0):
    diff = np.asarray(z_a, dtype=np.float64) - np.asarray(z_b, dtype=np.float64)
    return np.where(np.abs(diff) <= tolerance, 0, np.sign(diff)).astype(np.int64)


def whdr(pred, pairs, cfg=None):
    """Weighted fraction of pairs whose predicted relation disagrees.

    Raises UndefinedMetricError on an empty pair list rather than returning 0.
    """
    cfg = cfg or MetricConfig()
    table = as_table(pairs)
    if len(table) == 0:
        raise UndefinedMetricError("WHDR is undefined for an empty pair list")
    pred = np.asarray(pred, dtype=np.float64)
    check_in_bounds(table, pred.shape)
    check_relations(table)
    rel = predicted_relation(
        pred[table.a_row, table.a_col], pred[table.b_row, table.b_col],
        cfg.whdr_equality_tolerance,
    )
    wrong = rel != table.relation
    return float(np.sum(table.weight * wrong) / np.sum(table.weight))


def _pair_up(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise UndefinedMetricError("metric undefined on empty arrays")
    return pred, gt


def rmse(pred, gt):
    pred, gt = _pair_up(pred, gt)
    return float(np.sqrt(np.mean((pred - gt) ** 2)))


def delta_acc(pred, gt, threshold=1.25):
    """Fraction of elements with ``max(pred/gt, gt/pred) < threshold``."""
    pred, gt = _pair_up(pred, gt)
    if np.any(pred <= 0) or np.any(gt <= 0):
        raise ValueError("delta accuracy needs strictly positive inputs")
    ratio = np.maximum(pred / gt, gt / pred)
    return float(np.mean(ratio < threshold))


def si_rmse(pred, gt, cfg=None):
    cfg = cfg or MetricConfig()
    pred, gt = _pair_up(pred, gt)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("si_rmse needs finite inputs")
    pred = pred + cfg.log_epsilon
    gt = gt + cfg.log_epsilon
    if np.any(pred <= 0) or np.any(gt <= 0):
        raise ValueError("si_rmse needs positive inputs")
    d = np.log(pred) - np.log(gt)
    # clamp tiny negative round-off before the root
    return float(np.sqrt(max(np.mean(d * d) - np.mean(d) ** 2, 0.0)))


def align_scores_to_depth(scores, gt_depth):
    """Map closeness scores to positive depth by a log-space least-squares fit.

    Fits ``log(gt) ~ a * scores + b`` and returns ``exp(a * scores + b)``.
    This is an evaluation adapter for relative-score models, not part of
    any model's output.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.log(np.asarray(gt_depth, dtype=np.float64).ravel())
    design = np.stack([s, np.ones_like(s)], axis=1)
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    return np.exp(a * np.asarray(scores, dtype=np.float64) + b)
