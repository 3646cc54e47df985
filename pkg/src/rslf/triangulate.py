"""Linear initialisation by horizontal-only multi-view triangulation.

Viewpoints on one row are exposed at the same instant, so triangulating a
point from a single row is free of rolling-shutter inconsistency. Each
observation ``(x, y)`` through viewpoint tensor ``K = [A | b]`` gives two
equations linear in the point:

    (A_0 - x A_2) p = x b_2 - b_0
    (A_1 - y A_2) p = y b_2 - b_1
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rslf.data import ObservationSet, PointCloud
from rslf.errors import AllPointsSkipped
from rslf.geometry import _tensor_rows


@dataclass
class InitReport:
    points: PointCloud
    per_point_residual: dict[int, float] = field(default_factory=dict)
    rows_used: dict[int, int] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "points": {str(i): p.tolist() for i, p in zip(self.points.ids, self.points.points)},
            "per_point_residual": {str(k): v for k, v in self.per_point_residual.items()},
            "rows_used": {str(k): v for k, v in self.rows_used.items()},
            "skipped": list(self.skipped),
        }


def linear_system(obs: ObservationSet, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Stacked ``(2N, 3)`` design matrix and right-hand side for the selected observations."""
    if mask is not None:
        obs = obs.subset(mask)
    s, t = obs.intr.metric(obs.row, obs.col)
    K = _tensor_rows(obs.intr, s, t)
    A, b = K[:, :, :3], K[:, :, 3]
    x, y = obs.x[:, None], obs.y[:, None]
    rows_x = A[:, 0] - x * A[:, 2]
    rows_y = A[:, 1] - y * A[:, 2]
    rhs_x = obs.x * b[:, 2] - b[:, 0]
    rhs_y = obs.y * b[:, 2] - b[:, 1]
    M = np.empty((2 * len(obs), 3))
    M[0::2], M[1::2] = rows_x, rows_y
    r = np.empty(2 * len(obs))
    r[0::2], r[1::2] = rhs_x, rhs_y
    return M, r


def select_row(rows: np.ndarray) -> tuple[int, int]:
    """Best-covered viewpoint row (ties go to the lowest index) and its count."""
    values, counts = np.unique(rows, return_counts=True)
    k = int(np.argmax(counts))  # argmax returns the first maximum; values are sorted
    return int(values[k]), int(counts[k])


def triangulate_horizontal(obs: ObservationSet) -> InitReport:
    """Triangulate every point from the observations on its best-covered row.

    Points with fewer than two observations on that row are skipped.

    Raises:
        AllPointsSkipped: if no point can be triangulated.
    """
    ids, pts, residual, rows_used, skipped = [], [], {}, {}, []
    order = np.argsort(obs.point_id, kind="stable")
    pid_sorted = obs.point_id[order]
    uniq, starts = np.unique(pid_sorted, return_index=True)
    bounds = np.append(starts, len(pid_sorted))
    for k, pid in enumerate(uniq):
        idx = order[bounds[k] : bounds[k + 1]]
        row, count = select_row(obs.row[idx])
        if count < 2:
            skipped.append(int(pid))
            continue
        sel = idx[obs.row[idx] == row]
        M, r = linear_system(obs, sel)
        p, *_ = np.linalg.lstsq(M, r, rcond=None)
        ids.append(int(pid))
        pts.append(p)
        residual[int(pid)] = float(np.sqrt(np.mean((M @ p - r) ** 2)))
        rows_used[int(pid)] = row
    if not ids:
        raise AllPointsSkipped("no point has two observations on a common viewpoint row")
    cloud = PointCloud(np.array(ids), np.array(pts))
    return InitReport(cloud, residual, rows_used, skipped)
