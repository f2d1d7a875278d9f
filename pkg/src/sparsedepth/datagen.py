"""Synthetic layered scenes with exact depth, and their annotations.

Scenes are stacks of flat rectangles and ellipses over a background plane.
Metric depth is stored (smaller is closer); everything that consumes
closeness scores converts with :func:`closeness_from_depth`.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .arrays import read_array, write_array
from .exceptions import DegenerateSceneError, FormatError
from .pairs import OrdinalPair, relation_from_depth

logger = logging.getLogger(__name__)

DEPTH_RANGE = (1.0, 10.0)
MIN_SEPARATION = 0.5
MANIFEST = "manifest.jsonl"
_MAX_ATTEMPTS = 200


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    layer_count: int = 3
    texture_noise: float = 0.05
    depth_gradient: float = 0.0

    def validate(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("scene height and width must be at least 16")
        if self.layer_count < 2:
            raise ValueError("a scene needs at least 2 layers")
        if self.layer_count > self.height * self.width / 16:
            raise DegenerateSceneError(
                f"{self.layer_count} layers in a {self.height}x{self.width} scene "
                "leaves fewer than 16 pixels per layer"
            )
        span = DEPTH_RANGE[1] - DEPTH_RANGE[0]
        if (self.layer_count - 1) * MIN_SEPARATION > span:
            raise DegenerateSceneError(
                f"cannot fit {self.layer_count} depths {MIN_SEPARATION} apart in {DEPTH_RANGE}"
            )
        if self.texture_noise < 0 or self.depth_gradient < 0:
            raise ValueError("texture_noise and depth_gradient must be non-negative")


@dataclass
class Scene:
    image: np.ndarray
    depth: np.ndarray
    layer_map: np.ndarray
    id: str = ""

    @property
    def shape(self):
        return self.depth.shape


def closeness_from_depth(depth):
    """Rank-preserving map from metric depth to closeness (higher = nearer)."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be strictly positive")
    return 1.0 / depth


def _layer_depths(rng, n):
    # uniform over configurations with pairwise gaps >= MIN_SEPARATION
    lo, hi = DEPTH_RANGE
    slack = (hi - lo) - MIN_SEPARATION * (n - 1)
    base = np.sort(rng.uniform(0.0, slack, size=n))
    depths = lo + base + MIN_SEPARATION * np.arange(n)
    return depths[::-1].copy()  # back to front


def _shape_mask(rng, h, w, scale):
    rows, cols = np.mgrid[0:h, 0:w]
    sh = max(2, int(rng.integers(int(h * scale / 2), int(h * scale) + 1)))
    sw = max(2, int(rng.integers(int(w * scale / 2), int(w * scale) + 1)))
    r0 = int(rng.integers(0, h - sh + 1))
    c0 = int(rng.integers(0, w - sw + 1))
    if rng.random() < 0.5:
        return (rows >= r0) & (rows < r0 + sh) & (cols >= c0) & (cols < c0 + sw)
    cr, cc = r0 + (sh - 1) / 2, c0 + (sw - 1) / 2
    return ((rows - cr) / (sh / 2)) ** 2 + ((cols - cc) / (sw / 2)) ** 2 <= 1.0


def _layer_map(rng, spec):
    h, w, n = spec.height, spec.width, spec.layer_count
    scale = 0.5
    for attempt in range(_MAX_ATTEMPTS):
        if attempt and attempt % 50 == 0:
            scale *= 0.7
        layers = np.zeros((h, w), dtype=np.int64)
        for k in range(1, n):
            layers[_shape_mask(rng, h, w, scale)] = k
        counts = np.bincount(layers.ravel(), minlength=n)
        if counts.min() >= 4:
            return layers
    raise DegenerateSceneError(f"could not place {n} visible layers in {h}x{w}")


def gen_scene(seed, spec=None, scene_id=""):
    """Generate one scene; a pure function of ``(seed, spec)``."""
    spec = spec or SceneSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width

    layer_depths = _layer_depths(rng, spec.layer_count)
    layers = _layer_map(rng, spec)
    depth = layer_depths[layers]
    if spec.depth_gradient > 0:
        ramp = (np.arange(w) / max(w - 1, 1) - 0.5)[None, :]
        tilt = rng.uniform(-1.0, 1.0, size=spec.layer_count)[layers]
        depth = np.clip(depth * (1.0 + spec.depth_gradient * tilt * ramp), *DEPTH_RANGE)

    lo, hi = DEPTH_RANGE
    # red encodes nearness, the other channels are per-layer tints
    red = 0.1 + 0.8 * (hi - depth) / (hi - lo)
    tints = rng.uniform(0.1, 0.9, size=(spec.layer_count, 2))[layers]
    image = np.concatenate([red[..., None], tints], axis=-1)
    if spec.texture_noise > 0:
        image = image + rng.normal(0.0, spec.texture_noise, size=image.shape)
    image = np.clip(image, 0.0, 1.0)

    return Scene(
        image=image.astype(np.float32),
        depth=depth.astype(np.float32),
        layer_map=layers,
        id=scene_id,
    )


def gen_scenes(count, seed=0, spec=None):
    """``count`` scenes with ids ``scene_00000``...; scene ``i`` uses seed ``seed + i``."""
    return [gen_scene(seed + i, spec, scene_id=f"scene_{i:05d}") for i in range(count)]


def _groups(depth, layer_map):
    if layer_map is None:
        _, layer_map = np.unique(depth, return_inverse=True)
        layer_map = layer_map.reshape(depth.shape)
    return np.asarray(layer_map).ravel()


def derive_pairs(depth, n, seed=0, equal_fraction=0.0, tolerance=0.0, layer_map=None):
    """Sample ``n`` ordinal pairs from a metric depth map.

    About ``equal_fraction`` of the pairs have both points drawn from one
    layer (``layer_map`` if given, otherwise groups of identical depth). The
    remaining pairs prefer points whose depths differ by more than
    ``tolerance``. Relations are always recomputed from ``depth``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= equal_fraction <= 1.0:
        raise ValueError("equal_fraction must lie in [0, 1]")
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    flat = depth.ravel()
    rng = np.random.default_rng(seed)
    n_equal = int(round(n * equal_fraction))

    groups = _groups(depth, layer_map)
    members = {}
    if equal_fraction > 0:
        order = np.argsort(groups, kind="stable")
        bounds = np.flatnonzero(np.diff(groups[order])) + 1
        for chunk in np.split(order, bounds):
            if chunk.size >= 2:
                members[int(groups[chunk[0]])] = chunk
        if not members:
            raise DegenerateSceneError("no layer has two or more pixels to form equal pairs")
    eligible = np.concatenate(list(members.values())) if members else None

    a_idx = np.empty(n, dtype=np.int64)
    b_idx = np.empty(n, dtype=np.int64)
    for k in range(n):
        if k < n_equal:
            a = int(eligible[rng.integers(eligible.size)])
            pool = members[int(groups[a])]
            b = a
            while b == a:
                b = int(pool[rng.integers(pool.size)])
        else:
            a = int(rng.integers(flat.size))
            b = -1
            for _ in range(32):
                cand = int(rng.integers(flat.size))
                if cand != a and abs(flat[cand] - flat[a]) > tolerance:
                    b = cand
                    break
            if b < 0:
                far = np.flatnonzero(np.abs(flat - flat[a]) > tolerance)
                if far.size == 0:
                    far = np.delete(np.arange(flat.size), a)
                b = int(far[rng.integers(far.size)])
        a_idx[k], b_idx[k] = a, b

    # equal pairs first then unequal is an artefact of sampling; shuffle it away
    perm = rng.permutation(n)
    a_idx, b_idx = a_idx[perm], b_idx[perm]
    rel = relation_from_depth(flat[a_idx], flat[b_idx], tolerance)
    return [
        OrdinalPair((int(a // w), int(a % w)), (int(b // w), int(b % w)), int(r))
        for a, b, r in zip(a_idx, b_idx, rel)
    ]


# -- persistence -------------------------------------------------------------

def _format_pairs(pairs):
    lines = []
    for p in pairs:
        (ay, ax), (by, bx) = p.point_a, p.point_b
        lines.append(f"{ax} {ay} {bx} {by} {p.relation} {p.weight!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def _parse_pairs(path):
    pairs = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(path, "file not found") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 6:
            raise FormatError(path, f"line {lineno}: expected 6 fields, got {len(fields)}")
        try:
            ax, ay, bx, by, rel = (int(f) for f in fields[:5])
            weight = float(fields[5])
            pairs.append(OrdinalPair((ay, ax), (by, bx), rel, weight))
        except ValueError as exc:
            raise FormatError(path, f"line {lineno}: {exc}") from None
    return pairs


def write_dataset(scenes, pairs, dir_path):
    """Write scenes and their pair lists; returns the manifest records."""
    if len(scenes) != len(pairs):
        raise ValueError("need one pair list per scene")
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (scene, scene_pairs) in enumerate(zip(scenes, pairs)):
        sid = scene.id or f"scene_{i:05d}"
        rec = {
            "id": sid,
            "image_file": f"{sid}.image.sdt",
            "depth_file": f"{sid}.depth.sdt",
            "pairs_file": f"{sid}.pairs.txt",
            "height": int(scene.depth.shape[0]),
            "width": int(scene.depth.shape[1]),
            "layers_file": f"{sid}.layers.sdt",
        }
        write_array(root / rec["image_file"], scene.image)
        write_array(root / rec["depth_file"], scene.depth)
        write_array(root / rec["layers_file"], scene.layer_map)
        (root / rec["pairs_file"]).write_text(_format_pairs(scene_pairs), encoding="utf-8")
        records.append(rec)
    with open(root / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    logger.info("wrote %d scenes to %s", len(records), root)
    return records


def read_manifest(dir_path):
    path = Path(dir_path) / MANIFEST
    if not path.is_file():
        raise FormatError(path, "missing manifest")
    records = []
    required = ("id", "image_file", "depth_file", "pairs_file", "height", "width")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(path, f"line {lineno}: {exc.msg}") from None
        missing = [k for k in required if k not in rec]
        if missing:
            raise FormatError(path, f"line {lineno}: missing keys {missing}")
        records.append(rec)
    return records


def read_dataset(dir_path):
    """Inverse of :func:`write_dataset`; returns ``(scenes, pairs)``."""
    root = Path(dir_path)
    scenes: List[Scene] = []
    pairs: List[List[OrdinalPair]] = []
    for rec in read_manifest(root):
        image = read_array(root / rec["image_file"])
        depth = read_array(root / rec["depth_file"])
        expected = (rec["height"], rec["width"])
        if depth.shape != expected or image.shape[:2] != expected:
            raise FormatError(root / rec["depth_file"], f"shape does not match manifest {expected}")
        layers_file: Optional[str] = rec.get("layers_file")
        if layers_file:
            layer_map = read_array(root / layers_file).astype(np.int64)
        else:
            _, inv = np.unique(depth, return_inverse=True)
            layer_map = inv.reshape(depth.shape)
        scenes.append(Scene(image=image, depth=depth, layer_map=layer_map, id=rec["id"]))
        pairs.append(_parse_pairs(root / rec["pairs_file"]))
    return scenes, pairs


def scene_pairs(scenes, n, seed=0, equal_fraction=0.0, tolerance=0.0):
    """Derive ``n`` pairs for each scene, seeding each scene independently."""
    return [
        derive_pairs(s.depth, n, seed=seed + i, equal_fraction=equal_fraction,
                     tolerance=tolerance, layer_map=s.layer_map)
        for i, s in enumerate(scenes)
    ]


__all__ = [
    "SceneSpec", "Scene", "gen_scene", "gen_scenes", "derive_pairs", "scene_pairs",
    "write_dataset", "read_dataset", "read_manifest", "closeness_from_depth",
]
