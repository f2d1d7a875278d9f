"""Seeded geometric and photometric augmentation that keeps pair labels valid.

A :class:`GeometricTransform` is an output-to-source pixel lookup (nearest
neighbour, edge-clamped). Dense maps are resampled through the lookup; pair
points are carried forward and dropped when they leave the frame or when no
output pixel samples them.
"""
from dataclasses import dataclass

import numpy as np

from .pairs import PairTable


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = False
    crop: bool = False
    rotation_degrees: float = 0.0
    color_jitter: float = 0.0

    @property
    def any(self):
        return self.hflip or self.crop or self.rotation_degrees > 0 or self.color_jitter > 0


class GeometricTransform:
    def __init__(self, shape, hflip=False, shift=(0, 0), angle_degrees=0.0):
        self.shape = tuple(shape[:2])
        self.hflip = bool(hflip)
        self.shift = (int(shift[0]), int(shift[1]))
        self.angle = float(angle_degrees)
        self._src_r, self._src_c, self._valid = self._source_lookup()

    @property
    def identity(self):
        return not self.hflip and self.shift == (0, 0) and self.angle == 0.0

    def _rotation(self):
        t = np.deg2rad(self.angle)
        return np.cos(t), np.sin(t)

    def _source_lookup(self):
        h, w = self.shape
        rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
        # undo shift, then rotation, then flip
        r = rows - self.shift[0]
        c = cols - self.shift[1]
        cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
        cos, sin = self._rotation()
        rr = cr + cos * (r - cr) + sin * (c - cc)
        rc = cc - sin * (r - cr) + cos * (c - cc)
        sr = np.rint(rr).astype(np.int64)
        sc = np.rint(rc).astype(np.int64)
        if self.hflip:
            sc = (w - 1) - sc
        valid = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
        return np.clip(sr, 0, h - 1), np.clip(sc, 0, w - 1), valid

    def apply_map(self, arr):
        """Resample an ``(H, W, ...)`` array."""
        if self.identity:
            return arr
        return arr[self._src_r, self._src_c]

    def apply_channels_first(self, arr):
        if self.identity:
            return arr
        return arr[:, self._src_r, self._src_c]

    def _forward(self, r, c):
        h, w = self.shape
        if self.hflip:
            c = (w - 1) - c
        cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
        cos, sin = self._rotation()
        fr = cr + cos * (r - cr) - sin * (c - cc) + self.shift[0]
        fc = cc + sin * (r - cr) + cos * (c - cc) + self.shift[1]
        return np.rint(fr).astype(np.int64), np.rint(fc).astype(np.int64)

    def map_points(self, rows, cols):
        """Output coordinates of source points and a mask of the ones kept."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if self.identity:
            return rows, cols, np.ones(rows.shape, dtype=bool)
        h, w = self.shape
        fr, fc = self._forward(rows, cols)
        out_r = np.full(rows.shape, -1, dtype=np.int64)
        out_c = np.full(rows.shape, -1, dtype=np.int64)
        kept = np.zeros(rows.shape, dtype=bool)
        # rounding may land one pixel off; search the 3x3 neighbourhood
        for dr in (0, -1, 1):
            for dc in (0, -1, 1):
                qr, qc = fr + dr, fc + dc
                inside = (qr >= 0) & (qr < h) & (qc >= 0) & (qc < w) & ~kept
                qr_s, qc_s = np.clip(qr, 0, h - 1), np.clip(qc, 0, w - 1)
                hit = (
                    inside
                    & self._valid[qr_s, qc_s]
                    & (self._src_r[qr_s, qc_s] == rows)
                    & (self._src_c[qr_s, qc_s] == cols)
                )
                out_r[hit], out_c[hit] = qr[hit], qc[hit]
                kept |= hit
        return out_r, out_c, kept

    def apply_pairs(self, table: PairTable) -> PairTable:
        if self.identity:
            return table
        ar, ac, ka = self.map_points(table.a_row, table.a_col)
        br, bc, kb = self.map_points(table.b_row, table.b_col)
        keep = ka & kb
        return PairTable(ar[keep], ac[keep], br[keep], bc[keep], table.relation[keep], table.weight[keep])


def sample_transform(rng, shape, cfg: AugmentConfig):
    h, w = shape[:2]
    hflip = cfg.hflip and bool(rng.random() < 0.5)
    shift = (0, 0)
    if cfg.crop:
        shift = (int(rng.integers(-(h // 8), h // 8 + 1)), int(rng.integers(-(w // 8), w // 8 + 1)))
    angle = float(rng.uniform(-cfg.rotation_degrees, cfg.rotation_degrees)) if cfg.rotation_degrees > 0 else 0.0
    return GeometricTransform(shape, hflip=hflip, shift=shift, angle_degrees=angle)


def jitter_colors(rng, image, strength):
    if strength <= 0:
        return image
    gain = 1.0 + rng.uniform(-strength, strength, size=3)
    offset = rng.uniform(-strength, strength, size=3) * 0.5
    return np.clip(image * gain + offset, 0.0, 1.0).astype(np.float32)
