"""Observation and point-cloud containers shared by every stage."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rslf.errors import ValidationError
from rslf.geometry import ImagePoint, LightFieldIntrinsics


@dataclass
class ObservationSet:
    """Matched micro-image points, one row per (point_id, viewpoint).

    Stored column-wise for vectorised solving; ``records`` gives the
    per-observation view.
    """

    intr: LightFieldIntrinsics
    point_id: np.ndarray
    row: np.ndarray
    col: np.ndarray
    x: np.ndarray
    y: np.ndarray
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.point_id = np.asarray(self.point_id, dtype=np.int64).reshape(-1)
        self.row = np.asarray(self.row, dtype=np.int64).reshape(-1)
        self.col = np.asarray(self.col, dtype=np.int64).reshape(-1)
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        n = len(self.point_id)
        if not all(len(a) == n for a in (self.row, self.col, self.x, self.y)):
            raise ValidationError("observation columns have different lengths")
        if n and (self.row.min() < 0 or self.row.max() >= self.intr.rows):
            raise ValidationError("observation row index outside the viewpoint grid")
        if n and (self.col.min() < 0 or self.col.max() >= self.intr.cols):
            raise ValidationError("observation column index outside the viewpoint grid")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValidationError("observation coordinates must be finite")
        keys = np.stack([self.point_id, self.row, self.col], axis=1)
        if n and len(np.unique(keys, axis=0)) != n:
            raise ValidationError("duplicate observation for a (point_id, row, col) triple")

    def __len__(self) -> int:
        return len(self.point_id)

    @property
    def s(self) -> np.ndarray:
        return self.intr.metric(self.row, self.col)[0]

    @property
    def t(self) -> np.ndarray:
        return self.intr.metric(self.row, self.col)[1]

    @property
    def point_ids(self) -> np.ndarray:
        return np.unique(self.point_id)

    @property
    def records(self) -> list[ImagePoint]:
        return [
            ImagePoint(float(x), float(y), self.intr.viewpoint(int(r), int(c)), int(p))
            for p, r, c, x, y in zip(self.point_id, self.row, self.col, self.x, self.y)
        ]

    def subset(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return ObservationSet(
            self.intr,
            self.point_id[mask],
            self.row[mask],
            self.col[mask],
            self.x[mask],
            self.y[mask],
            self.noise_sigma,
            self.seed,
        )

    def sorted(self) -> "ObservationSet":
        order = np.lexsort((self.col, self.row, self.point_id))
        return self.subset(order)


@dataclass
class PointCloud:
    """3D points keyed by id, optionally with the normalisation frame used to solve them."""

    ids: np.ndarray
    points: np.ndarray
    center: np.ndarray | None = None
    scale: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.ids) != len(self.points):
            raise ValidationError("point cloud ids and points differ in length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValidationError("point cloud ids must be unique")
        if self.center is not None:
            self.center = np.asarray(self.center, dtype=float).reshape(3)

    def __len__(self) -> int:
        return len(self.ids)

    def as_dict(self) -> dict[int, np.ndarray]:
        return {int(i): p for i, p in zip(self.ids, self.points)}

    def take(self, ids) -> "PointCloud":
        lookup = {int(i): k for k, i in enumerate(self.ids)}
        idx = [lookup[int(i)] for i in ids]
        return PointCloud(self.ids[idx], self.points[idx], self.center, self.scale, dict(self.meta))
