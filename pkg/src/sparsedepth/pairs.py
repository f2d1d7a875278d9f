"""Ordinal point-pair annotations and their vectorised table form."""
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np

CLOSER, FURTHER, EQUAL = 1, -1, 0
RELATIONS = (CLOSER, FURTHER, EQUAL)


@dataclass(frozen=True)
class OrdinalPair:
    """Two pixels and the ground-truth relation of ``point_a`` to ``point_b``.

    ``relation`` is 1 when ``point_a`` is closer to the camera, -1 when it is
    further and 0 when both are at the same depth. Points are ``(row, col)``.
    """

    point_a: Tuple[int, int]
    point_b: Tuple[int, int]
    relation: int
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"pair weight must be positive, got {self.weight}")


class PairTable(NamedTuple):
    a_row: np.ndarray
    a_col: np.ndarray
    b_row: np.ndarray
    b_col: np.ndarray
    relation: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return int(self.relation.shape[0])


def as_table(pairs) -> PairTable:
    """Convert a sequence of :class:`OrdinalPair` (or a table) to a PairTable."""
    if isinstance(pairs, PairTable):
        return pairs
    pairs = list(pairs)
    if not pairs:
        empty_i = np.zeros(0, dtype=np.int64)
        return PairTable(empty_i, empty_i, empty_i, empty_i, empty_i, np.zeros(0))
    a = np.array([p.point_a for p in pairs], dtype=np.int64)
    b = np.array([p.point_b for p in pairs], dtype=np.int64)
    return PairTable(
        a[:, 0], a[:, 1], b[:, 0], b[:, 1],
        np.array([p.relation for p in pairs], dtype=np.int64),
        np.array([p.weight for p in pairs], dtype=np.float64),
    )


def to_pairs(table: PairTable):
    return [
        OrdinalPair((int(ar), int(ac)), (int(br), int(bc)), int(r), float(w))
        for ar, ac, br, bc, r, w in zip(*table)
    ]


def check_in_bounds(table: PairTable, shape: Sequence[int]):
    h, w = shape[:2]
    rows = np.concatenate([table.a_row, table.b_row])
    cols = np.concatenate([table.a_col, table.b_col])
    if rows.size and (rows.min() < 0 or rows.max() >= h or cols.min() < 0 or cols.max() >= w):
        raise IndexError(f"pair coordinates fall outside a {h}x{w} map")


def check_relations(table: PairTable):
    bad = ~np.isin(table.relation, RELATIONS)
    if bad.any():
        raise ValueError(f"unknown relation code {int(table.relation[bad][0])}")


def relation_from_depth(depth_a, depth_b, tolerance=0.0):
    """Relation of a to b from metric depth (smaller depth is closer)."""
    diff = np.asarray(depth_b, dtype=np.float64) - np.asarray(depth_a, dtype=np.float64)
    return np.where(np.abs(diff) <= tolerance, EQUAL, np.sign(diff)).astype(np.int64)
