"""Decay-rate driven loss rebalancing with a hard-to-easy emphasis schedule.

Each update compares every loss with its value at the previous checkpoint.
The decay ratio ``r = current / previous`` is large for losses that are
decaying slowly ("hard") and small for fast ones ("easy"). New weights are
proportional to ``r ** alpha`` where ``alpha`` moves linearly from
``alpha_start`` (positive: emphasise hard losses) to ``alpha_end``
(negative: emphasise easy losses) over the run. Weights start uniform, are
clamped to ``[0.01, 0.99]`` and renormalised to sum to one.

Auxiliary head weights are never touched here; the auxiliary bundle is a
single named loss.
"""
import csv
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .exceptions import NonFiniteLossError

LOSS_FLOOR = 1e-12
WEIGHT_BOUNDS = (0.01, 0.99)


@dataclass(frozen=True)
class RebalanceState:
    loss_names: tuple
    weights: tuple
    checkpoint_values: Optional[tuple] = None
    step_index: int = 0
    total_steps: int = 1
    alpha_start: float = 4.0
    alpha_end: float = -4.0

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.loss_names, self.weights))

    @property
    def alpha(self):
        span = max(self.total_steps - 1, 1)
        frac = min(self.step_index / span, 1.0)
        return self.alpha_start + (self.alpha_end - self.alpha_start) * frac


def init_rebalancer(loss_names, total_steps, alpha_start=4.0, alpha_end=-4.0):
    names = tuple(loss_names)
    if len(names) < 2:
        raise ValueError("rebalancing needs at least two losses")
    if len(set(names)) != len(names):
        raise ValueError("loss names must be unique")
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    n = len(names)
    return RebalanceState(
        loss_names=names,
        weights=tuple([1.0 / n] * n),
        total_steps=int(total_steps),
        alpha_start=float(alpha_start),
        alpha_end=float(alpha_end),
    )


def _normalise(raw):
    w = raw / raw.sum()
    w = np.clip(w, *WEIGHT_BOUNDS)
    return w / w.sum()


def rebalance_step(state: RebalanceState, current_losses) -> RebalanceState:
    """Return the state after observing ``current_losses``.

    ``current_losses`` is a mapping keyed by loss name or a sequence in
    ``state.loss_names`` order. The first observation only records
    checkpoints (all ratios are 1, so weights stay as they are).
    """
    if isinstance(current_losses, dict):
        missing = [n for n in state.loss_names if n not in current_losses]
        if missing:
            raise KeyError(f"missing losses {missing}")
        values = [current_losses[n] for n in state.loss_names]
    else:
        values = list(current_losses)
        if len(values) != len(state.loss_names):
            raise ValueError("one value per loss name is required")
    for name, v in zip(state.loss_names, values):
        if not math.isfinite(float(v)):
            raise NonFiniteLossError(name)
    current = np.maximum(np.asarray(values, dtype=np.float64), LOSS_FLOOR)

    if state.checkpoint_values is None:
        ratios = np.ones_like(current)
    else:
        ratios = current / np.asarray(state.checkpoint_values)

    alpha = state.alpha
    logits = alpha * np.log(ratios)
    raw = np.exp(logits - logits.max())
    weights = _normalise(raw) if state.checkpoint_values is not None else np.asarray(state.weights)
    return replace(
        state,
        weights=tuple(float(w) for w in weights),
        checkpoint_values=tuple(float(v) for v in current),
        step_index=state.step_index + 1,
    )


def schedule_positions(epoch_length, per_epoch=5):
    """Evenly spaced step indices (within one epoch) at which to rebalance."""
    if per_epoch < 1:
        raise ValueError("per_epoch must be >= 1")
    if per_epoch > epoch_length:
        raise ValueError(f"cannot rebalance {per_epoch} times in an epoch of {epoch_length} steps")
    return [((k + 1) * epoch_length) // per_epoch - 1 for k in range(per_epoch)]


@dataclass
class Rebalancer:
    """Stateful wrapper used by the training loop.

    Accumulates component losses between checkpoints and feeds their mean to
    :func:`rebalance_step`. ``history`` records ``(step, before, after)``.
    """

    state: RebalanceState
    history: List[tuple] = field(default_factory=list)
    _sums: Optional[np.ndarray] = None
    _count: int = 0

    @classmethod
    def create(cls, loss_names, total_steps, **kwargs):
        return cls(init_rebalancer(loss_names, total_steps, **kwargs))

    @property
    def weights(self):
        return self.state.as_dict()

    def observe(self, losses: Dict[str, float]):
        vec = np.array([losses[n] for n in self.state.loss_names], dtype=np.float64)
        self._sums = vec if self._sums is None else self._sums + vec
        self._count += 1

    def checkpoint(self, step):
        if not self._count:
            return self.state
        before = self.state.as_dict()
        mean = self._sums / self._count
        self.state = rebalance_step(self.state, mean)
        self._sums, self._count = None, 0
        self.history.append((step, before, self.state.as_dict()))
        return self.state


def read_curves(path):
    """Read a ``step,name,value`` CSV into ``{step: {name: value}}`` (step order)."""
    curves: Dict[int, Dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"step", "name", "value"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header step,name,value")
        for row in reader:
            curves.setdefault(int(row["step"]), {})[row["name"]] = float(row["value"])
    return dict(sorted(curves.items()))


def replay(curves: Dict[int, Dict[str, float]], alpha_start=4.0, alpha_end=-4.0):
    """Run the rebalancer over recorded curves; returns ``[(step, {name: weight})]``."""
    if not curves:
        raise ValueError("no curve rows to replay")
    names: Sequence[str] = sorted(next(iter(curves.values())))
    state = init_rebalancer(names, total_steps=len(curves), alpha_start=alpha_start, alpha_end=alpha_end)
    out = []
    for step, values in curves.items():
        state = rebalance_step(state, values)
        out.append((step, state.as_dict()))
    return out
