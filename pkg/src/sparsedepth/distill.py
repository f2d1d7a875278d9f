"""Teachers and the distillation objective.

The objective combines three named terms:

* ``pixelwise``: RMSE between every student head and the teacher map,
  combined with the fixed auxiliary head weights;
* ``ranking``: ordinal ranking loss of every head against ground-truth
  pairs, combined the same way (dropped in teacher-only mode);
* ``pairwise``: cosine-affinity mismatch between the student's pre-head
  decoder features and the teacher's features.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np
import torch

from .arrays import read_array, write_array
from .datagen import closeness_from_depth
from .exceptions import FormatError, UnknownImageError
from .losses import (
    AuxWeights,
    KDWeights,
    LossReport,
    aux_combine,
    pairwise_affinity_loss,
    pixelwise_distill_loss,
    ranking_loss,
)

COMPONENTS = ("pixelwise", "ranking", "pairwise")


@dataclass(frozen=True)
class DistillConfig:
    kd_weights: KDWeights = field(default_factory=KDWeights)
    affinity_grid: int = 8
    use_ground_truth_rank: bool = True

    def __post_init__(self):
        if self.affinity_grid < 2:
            raise ValueError("affinity_grid must be >= 2")

    @property
    def active_components(self):
        if self.use_ground_truth_rank and self.kd_weights.lambda_rank > 0:
            return COMPONENTS
        return ("pixelwise", "pairwise")


class Teacher:
    """Read-only source of closeness maps and feature maps keyed by image id."""

    def predict(self, image_id) -> np.ndarray:
        raise NotImplementedError

    def features(self, image_id) -> np.ndarray:
        raise NotImplementedError


class OracleTeacher(Teacher):
    """Teacher built from ground-truth depth.

    ``predict`` is ``1 / depth`` plus i.i.d. Gaussian noise of ``noise_sigma``;
    ``features`` embeds 3x3 patches of that map with a fixed random linear
    projection. Both are computed once and cached, seeded per image.
    """

    def __init__(self, depths: Dict[str, np.ndarray], noise_sigma=0.0, seed=0, channels=8):
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        self._depths = dict(depths)
        self._proj = np.random.default_rng([self.seed, 0x5EED]).normal(
            0.0, 1.0 / 3.0, size=(channels, 9)
        )
        self._pred_cache: Dict[str, np.ndarray] = {}
        self._feat_cache: Dict[str, np.ndarray] = {}

    @property
    def image_ids(self):
        return list(self._depths)

    def _index(self, image_id):
        try:
            return list(self._depths).index(image_id)
        except ValueError:
            raise UnknownImageError(f"teacher has no image {image_id!r}") from None

    def predict(self, image_id):
        if image_id not in self._pred_cache:
            idx = self._index(image_id)
            pred = closeness_from_depth(self._depths[image_id])
            if self.noise_sigma > 0:
                rng = np.random.default_rng([self.seed, idx])
                pred = pred + rng.normal(0.0, self.noise_sigma, size=pred.shape)
            self._pred_cache[image_id] = pred.astype(np.float32)
        return self._pred_cache[image_id]

    def features(self, image_id):
        if image_id not in self._feat_cache:
            pred = self.predict(image_id)
            padded = np.pad(pred, 1, mode="edge")
            h, w = pred.shape
            patches = np.stack(
                [padded[dr:dr + h, dc:dc + w] for dr in range(3) for dc in range(3)], axis=0
            )
            feat = np.tensordot(self._proj, patches, axes=(1, 0))
            self._feat_cache[image_id] = feat.astype(np.float32)
        return self._feat_cache[image_id]


def oracle_teacher(dataset, noise_sigma=0.0, seed=0):
    """Oracle teacher over a dataset's scenes (anything with ``.scenes``, or a list of scenes)."""
    scenes = getattr(dataset, "scenes", dataset)
    return OracleTeacher({s.id: s.depth for s in scenes}, noise_sigma=noise_sigma, seed=seed)


class CachedTeacher(Teacher):
    """Teacher outputs loaded from a directory written by :func:`save_teacher_cache`."""

    def __init__(self, dir_path):
        self.root = Path(dir_path)
        index_path = self.root / "teacher.json"
        if not index_path.is_file():
            raise FormatError(index_path, "missing teacher index")
        try:
            self._index = json.loads(index_path.read_text(encoding="utf-8"))["images"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise FormatError(index_path, f"unreadable teacher index: {exc}") from None

    def _entry(self, image_id):
        try:
            return self._index[image_id]
        except KeyError:
            raise UnknownImageError(f"teacher cache has no image {image_id!r}") from None

    def predict(self, image_id):
        return read_array(self.root / self._entry(image_id)["predict"])

    def features(self, image_id):
        return read_array(self.root / self._entry(image_id)["features"])


def save_teacher_cache(teacher: Teacher, image_ids: Sequence[str], dir_path):
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    index = {}
    for i, image_id in enumerate(image_ids):
        entry = {"predict": f"t{i:05d}.pred.sdt", "features": f"t{i:05d}.feat.sdt"}
        write_array(root / entry["predict"], teacher.predict(image_id))
        write_array(root / entry["features"], teacher.features(image_id))
        index[image_id] = entry
    (root / "teacher.json").write_text(json.dumps({"images": index}, indent=1) + "\n", encoding="utf-8")
    return root


def distill_loss(student_out, teacher_pred, teacher_feat, pairs=None, cfg=None, aux=None, kd_weights=None):
    """Weighted distillation objective for one sample.

    ``student_out`` is an unbatched :class:`~sparsedepth.model.ModelOutputs`
    from a training-mode forward pass. ``teacher_pred`` is ``(H, W)`` and
    ``teacher_feat`` is ``(C, h, w)``; both are treated as constants.
    ``kd_weights`` overrides ``cfg.kd_weights`` (used by the rebalancer).
    """
    cfg = cfg or DistillConfig()
    kd = kd_weights or cfg.kd_weights
    preds = student_out.predictions
    aux = aux or AuxWeights.for_heads(len(preds) - 1)
    dtype = student_out.final.dtype
    teacher_pred = torch.as_tensor(np.asarray(teacher_pred) if not torch.is_tensor(teacher_pred) else teacher_pred)
    teacher_feat = torch.as_tensor(np.asarray(teacher_feat) if not torch.is_tensor(teacher_feat) else teacher_feat)

    components = {
        "pixelwise": pixelwise_distill_loss(preds, teacher_pred.to(dtype), aux),
        "pairwise": pairwise_affinity_loss(
            student_out.penultimate_features, teacher_feat.to(dtype), cfg.affinity_grid
        ),
    }
    weights = {"pixelwise": kd.lambda_pixel, "pairwise": kd.lambda_pair}
    if cfg.use_ground_truth_rank and kd.lambda_rank > 0:
        if pairs is None:
            raise ValueError("ground-truth ranking is enabled but no pairs were given")
        components["ranking"] = aux_combine([ranking_loss(p, pairs) for p in preds], aux)
        weights["ranking"] = kd.lambda_rank

    total = None
    for name in COMPONENTS:
        if name in components:
            term = weights[name] * components[name]
            total = term if total is None else total + term
    return LossReport(total=total, components=components, weights=weights)


def kd_weights_from(mapping: Optional[Dict[str, float]], base: KDWeights):
    """KDWeights with any rebalanced entries from ``mapping`` substituted."""
    if not mapping:
        return base
    return KDWeights(
        lambda_pixel=mapping.get("pixelwise", base.lambda_pixel),
        lambda_rank=mapping.get("ranking", base.lambda_rank),
        lambda_pair=mapping.get("pairwise", base.lambda_pair),
    )
