"""Deterministic training loop, sequential curricula and evaluation."""
import csv
import io
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import losses as L
from .augment import AugmentConfig, jitter_colors, sample_transform
from .distill import DistillConfig, distill_loss, kd_weights_from
from .exceptions import NonFiniteLossError
from .metrics import MetricConfig, align_scores_to_depth, delta_acc, rmse, si_rmse, whdr
from .model import ModelOutputs, save_checkpoint
from .pairs import as_table
from .rebalance import Rebalancer, schedule_positions

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd_momentum")
LR_SCHEDULES = ("halve_every_k_epochs", "step_decade_every_k")
LOSS_SUITES = ("ranking", "improved_ranking", "si_composite", "distill")
METRIC_FIELDS = ("whdr", "rmse", "si_rmse", "delta1")


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 4
    optimizer: str = "adam"
    lr: float = 1e-4
    lr_schedule: str = "halve_every_k_epochs"
    lr_step: int = 1
    momentum: float = 0.9
    weight_decay: float = 0.0
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss_suite: str = "ranking"
    rebalance: bool = False
    rebalance_per_epoch: int = 5
    si: L.SICompositeConfig = field(default_factory=L.SICompositeConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    aux_weights: Optional[L.AuxWeights] = None
    metrics: MetricConfig = field(default_factory=MetricConfig)
    val_fraction: float = 0.1

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # lr == 0 is tolerated for diagnostics only
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise ValueError("lr must be a finite non-negative number")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.lr_step < 1:
            raise ValueError("lr_step must be >= 1")
        if self.loss_suite not in LOSS_SUITES:
            raise ValueError(f"loss_suite must be one of {LOSS_SUITES}")
        if self.rebalance and self.loss_suite != "distill":
            raise ValueError("rebalancing applies to the distill loss suite only")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def lr_at(self, epoch):
        factor = 0.5 if self.lr_schedule == "halve_every_k_epochs" else 0.1
        return self.lr * factor ** (epoch // self.lr_step)


@dataclass
class DepthDataset:
    """Scenes plus optional per-scene pair lists.

    ``scenes`` need ``image`` and ``id``; ``depth`` may be ``None`` for data
    that only carries ordinal annotations.
    """

    scenes: list
    pairs: Optional[list] = None
    name: str = ""

    def __post_init__(self):
        if self.pairs is not None:
            if len(self.pairs) != len(self.scenes):
                raise ValueError("need one pair list per scene")
            self.pairs = [as_table(p) for p in self.pairs]

    def __len__(self):
        return len(self.scenes)

    @property
    def has_depth(self):
        return all(getattr(s, "depth", None) is not None for s in self.scenes)

    def subset(self, indices):
        return DepthDataset(
            [self.scenes[i] for i in indices],
            None if self.pairs is None else [self.pairs[i] for i in indices],
            self.name,
        )

    def split(self, fraction=0.1):
        """Deterministic ``(train, val)`` split by a hash of each scene id."""
        if fraction <= 0:
            return self, self.subset([])
        val = [i for i, s in enumerate(self.scenes) if zlib.crc32(s.id.encode()) % 1000 < fraction * 1000]
        val_set = set(val)
        train = [i for i in range(len(self)) if i not in val_set]
        return self.subset(train), self.subset(val)


@dataclass
class TrainLog:
    steps: List[dict] = field(default_factory=list)
    epoch_metrics: List[dict] = field(default_factory=list)
    rebalance_events: List[dict] = field(default_factory=list)

    def events(self):
        """Chronological ``{step, kind, payload}`` records."""
        rows = []
        for m in self.epoch_metrics:
            rows.append((m["step"], 0, {"step": m["step"], "kind": "metrics", "payload": m}))
        for s in self.steps:
            rows.append((s["step"], 1, {"step": s["step"], "kind": "loss", "payload": s}))
        for r in self.rebalance_events:
            rows.append((r["step"], 2, {"step": r["step"], "kind": "rebalance", "payload": r}))
        rows.sort(key=lambda t: (t[0], t[1]))
        return [r[2] for r in rows]

    def metrics_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("epoch",) + METRIC_FIELDS)
        for m in self.epoch_metrics:
            writer.writerow([m["epoch"]] + [_fmt(m.get(k)) for k in METRIC_FIELDS])
        return buf.getvalue()

    def write(self, out_dir):
        root = Path(out_dir)
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "events.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for ev in self.events():
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
        (root / "metrics.csv").write_text(self.metrics_csv(), encoding="utf-8")


def _fmt(value):
    return "NA" if value is None else f"{value:.4f}"


# -- evaluation --------------------------------------------------------------

def evaluate(model, dataset: DepthDataset, metric_cfg=None, batch_size=32):
    """Mean per-image metrics of the final head; absent annotations give ``None``."""
    from .model import predict

    metric_cfg = metric_cfg or MetricConfig()
    record = dict.fromkeys(METRIC_FIELDS)
    if len(dataset) == 0:
        return record
    was_training = model.training
    model.eval()
    try:
        scores = predict(model, np.stack([s.image for s in dataset.scenes]), batch_size=batch_size)
    finally:
        model.train(was_training)
    return metrics_from_scores(scores, dataset, metric_cfg)


def metrics_from_scores(scores, dataset: DepthDataset, metric_cfg=None):
    metric_cfg = metric_cfg or MetricConfig()
    record = dict.fromkeys(METRIC_FIELDS)
    if not np.all(np.isfinite(scores)):
        logger.warning("non-finite predictions; metrics reported as NaN")
        if dataset.pairs is not None:
            record["whdr"] = math.nan
        if dataset.has_depth and len(dataset):
            record.update(rmse=math.nan, si_rmse=math.nan, delta1=math.nan)
        return record
    if dataset.pairs is not None:
        vals = [whdr(z, p, metric_cfg) for z, p in zip(scores, dataset.pairs) if len(p)]
        if vals:
            record["whdr"] = float(np.mean(vals))
    if dataset.has_depth and len(dataset):
        r, s, d = [], [], []
        for z, scene in zip(scores, dataset.scenes):
            gt = np.asarray(scene.depth, dtype=np.float64)
            pred = align_scores_to_depth(z, gt)
            r.append(rmse(pred, gt))
            s.append(si_rmse(pred, gt, metric_cfg))
            d.append(delta_acc(pred, gt, metric_cfg.delta_threshold))
        record.update(rmse=float(np.mean(r)), si_rmse=float(np.mean(s)), delta1=float(np.mean(d)))
    return record


# -- training ----------------------------------------------------------------

def _check_annotations(dataset, cfg, teacher):
    suite = cfg.loss_suite
    if suite in ("ranking", "improved_ranking") and dataset.pairs is None:
        raise ValueError(f"loss suite {suite!r} needs ordinal pairs")
    if suite == "si_composite" and not dataset.has_depth:
        raise ValueError("loss suite 'si_composite' needs dense depth")
    if suite == "distill":
        if teacher is None:
            raise ValueError("loss suite 'distill' needs a teacher")
        if cfg.distill.use_ground_truth_rank and cfg.distill.kd_weights.lambda_rank > 0 and dataset.pairs is None:
            raise ValueError("distillation with ranking supervision needs ordinal pairs")
    elif teacher is not None:
        raise ValueError("a teacher is only used with the 'distill' loss suite")


def _make_optimizer(model, cfg):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8,
                                weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


@dataclass
class _Sample:
    image: np.ndarray
    pairs: object
    depth: Optional[np.ndarray]
    teacher_pred: Optional[np.ndarray]
    teacher_feat: Optional[np.ndarray]


def _prepare(dataset, idx, cfg, teacher, rng):
    scene = dataset.scenes[idx]
    image = np.asarray(scene.image, dtype=np.float32)
    pairs = None if dataset.pairs is None else dataset.pairs[idx]
    depth = getattr(scene, "depth", None)
    t_pred = t_feat = None
    if teacher is not None:
        t_pred = teacher.predict(scene.id)
        t_feat = teacher.features(scene.id)
    if cfg.augment.any:
        tf = sample_transform(rng, image.shape, cfg.augment)
        image = tf.apply_map(image)
        if pairs is not None:
            pairs = tf.apply_pairs(pairs)
        if depth is not None:
            depth = tf.apply_map(depth)
        if t_pred is not None:
            t_pred = tf.apply_map(t_pred)
            t_feat = tf.apply_channels_first(t_feat)
        image = jitter_colors(rng, image, cfg.augment.color_jitter)
    return _Sample(image, pairs, depth, t_pred, t_feat)


def _sample_loss(out: ModelOutputs, sample: _Sample, cfg, aux, kd_weights):
    preds = out.predictions
    suite = cfg.loss_suite
    if suite in ("ranking", "improved_ranking"):
        if len(sample.pairs) == 0:
            return None
        fn = L.ranking_loss if suite == "ranking" else L.improved_ranking_loss
        value = L.aux_combine([fn(p, sample.pairs) for p in preds], aux)
        return L.LossReport(total=value, components={suite: value}, weights={suite: 1.0})
    if suite == "si_composite":
        # closeness score s maps to positive depth exp(-s)
        terms = [L.si_composite_loss(torch.exp(-p), sample.depth, sample.image, cfg.si)[0] for p in preds]
        value = L.aux_combine(terms, aux)
        return L.LossReport(total=value, components={suite: value}, weights={suite: 1.0})
    pairs = sample.pairs
    if pairs is not None and len(pairs) == 0:
        pairs = None
    dcfg = cfg.distill
    if pairs is None and dcfg.use_ground_truth_rank and dcfg.kd_weights.lambda_rank > 0:
        dcfg = DistillConfig(dcfg.kd_weights, dcfg.affinity_grid, use_ground_truth_rank=False)
    return distill_loss(out, sample.teacher_pred, sample.teacher_feat, pairs, dcfg, aux, kd_weights)


def _unbatch(out, b):
    return ModelOutputs(
        final=out.final[b],
        intermediates=[t[b] for t in out.intermediates],
        penultimate_features=out.penultimate_features[b],
    )


def train(model, dataset: DepthDataset, cfg: TrainConfig, teacher=None, out_dir=None, epoch_offset=0):
    """Train ``model`` in place; returns ``(model, TrainLog)``.

    Shuffling and augmentation are keyed on ``(seed, epoch_offset + epoch,
    scene)`` so results do not depend on anything but the inputs.
    """
    cfg.validate()
    _check_annotations(dataset, cfg, teacher)
    train_set, val_set = dataset.split(cfg.val_fraction)
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    n_heads = len(model.aux_heads)
    aux = cfg.aux_weights or L.AuxWeights.for_heads(n_heads)
    if len(aux.lambdas) != n_heads + 1:
        raise ValueError(f"{len(aux.lambdas)} aux weights for {n_heads + 1} prediction heads")

    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    rebalancer = None
    positions = set()
    if cfg.rebalance:
        per_epoch = min(cfg.rebalance_per_epoch, steps_per_epoch)
        positions = set(schedule_positions(steps_per_epoch, per_epoch))
        rebalancer = Rebalancer.create(cfg.distill.active_components, cfg.epochs * per_epoch)

    optimizer = _make_optimizer(model, cfg)
    log = TrainLog()

    def snapshot(epoch, step):
        rec = evaluate(model, val_set if len(val_set) else train_set, cfg.metrics)
        rec.update(epoch=epoch, step=step)
        log.epoch_metrics.append(rec)
        logger.info("epoch %d: %s", epoch, {k: rec[k] for k in METRIC_FIELDS})

    snapshot(0, 0)
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        key = cfg.seed, epoch_offset + epoch
        lr = cfg.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = np.random.default_rng([*key, 0]).permutation(len(train_set))
        for pos in range(steps_per_epoch):
            batch = order[pos * cfg.batch_size:(pos + 1) * cfg.batch_size]
            samples = [
                _prepare(train_set, int(i), cfg, teacher, np.random.default_rng([*key, 1, int(i)]))
                for i in batch
            ]
            x = torch.from_numpy(np.stack([s.image for s in samples])).permute(0, 3, 1, 2).contiguous()
            out = model(x, with_heads=True)
            applied = rebalancer.weights if rebalancer else None
            kd = kd_weights_from(applied, cfg.distill.kd_weights)
            reports = [r for r in (_sample_loss(_unbatch(out, b), s, cfg, aux, kd)
                                   for b, s in enumerate(samples)) if r is not None]
            if not reports:
                continue
            total = sum(r.total for r in reports) / len(reports)
            names = sorted({k for r in reports for k in r.components})
            components = {
                k: float(np.mean([float(r.components[k].detach()) for r in reports if k in r.components]))
                for k in names
            }
            for name, value in list(components.items()) + [("total", float(total.detach()))]:
                if not math.isfinite(value):
                    raise NonFiniteLossError(name, step)
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            log.steps.append({
                "step": step, "epoch": epoch + 1, "lr": lr, "total": float(total.detach()),
                "components": components, "weights": dict(reports[0].weights),
                "aux_weights": list(aux.lambdas),
            })
            if rebalancer is not None:
                if all(n in components for n in rebalancer.state.loss_names):
                    rebalancer.observe(components)
                if pos in positions:
                    before = rebalancer.weights
                    rebalancer.checkpoint(step)
                    log.rebalance_events.append({"step": step, "before": before, "after": rebalancer.weights})
            step += 1
        snapshot(epoch + 1, step)

    if out_dir is not None:
        save_checkpoint(model, Path(out_dir) / "checkpoint")
        log.write(out_dir)
    return model, log


def train_sequential(model, stages):
    """Train on ``stages`` in order, each a ``(dataset, cfg)`` or ``(dataset, cfg, teacher)``.

    Every stage starts from the weights the previous one produced. Epoch
    numbering for shuffling continues across stages.
    """
    if not stages:
        raise ValueError("need at least one stage")
    logs = []
    offset = 0
    for stage in stages:
        dataset, cfg, *rest = stage
        teacher = rest[0] if rest else None
        model, log = train(model, dataset, cfg, teacher=teacher, epoch_offset=offset)
        logs.append(log)
        offset += cfg.epochs
    return model, logs
