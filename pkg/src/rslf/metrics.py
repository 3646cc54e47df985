"""Depth-error metrics on matched sparse point sets and RS distortion summaries."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from rslf.data import ObservationSet, PointCloud
from rslf.errors import NoMatches, ValidationError, ZeroGroundTruthDepth
from rslf.geometry import LightFieldIntrinsics, MotionState, displace

METRIC_NAMES = ("abs_rel", "abs_diff", "rms", "delta1", "delta2", "delta3")
DELTA_BASE = 1.25


@dataclass
class MetricsReport:
    abs_rel: float
    abs_diff: float
    rms: float
    delta1: float
    delta2: float
    delta3: float
    n_points: int
    frame: str = "center"
    quantity: str = "depth"

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self, **keys) -> dict:
        row = dict(keys)
        row.update({name: getattr(self, name) for name in METRIC_NAMES})
        row["n_points"] = self.n_points
        return row


def anchor_row(intr: LightFieldIntrinsics, anchor: str) -> int:
    """Viewpoint row whose exposure instant defines the comparison frame."""
    if anchor == "first":
        return 0
    if anchor == "center":
        return (intr.rows - 1) // 2
    raise ValidationError(f"unknown anchor {anchor!r} (expected 'first' or 'center')")


def to_anchor(cloud: PointCloud, motion: MotionState, intr: LightFieldIntrinsics, anchor: str = "center") -> PointCloud:
    """Express row-0 points in the camera frame at the anchor row's exposure."""
    row = anchor_row(intr, anchor)
    moved = displace(cloud.points, motion, intr.tau, row) if row else cloud.points.copy()
    return PointCloud(cloud.ids, moved, cloud.center, cloud.scale, dict(cloud.meta))


def _match(est: PointCloud, gt: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    common = np.intersect1d(est.ids, gt.ids)
    if len(common) == 0:
        raise NoMatches("estimate and ground truth share no point ids")
    e_order, g_order = np.argsort(est.ids), np.argsort(gt.ids)
    e = est.points[e_order][np.searchsorted(est.ids[e_order], common)]
    g = gt.points[g_order][np.searchsorted(gt.ids[g_order], common)]
    return e, g


def compute_metrics(
    est: PointCloud, gt: PointCloud, frame: str = "center", quantity: str = "depth"
) -> MetricsReport:
    """Six error metrics over points matched by id.

    ``quantity="depth"`` compares z coordinates. ``quantity="euclidean"``
    uses the 3D distance between matched points for the error metrics and
    the ratio of ranges for the delta thresholds.

    Raises:
        NoMatches: no common point id.
        ZeroGroundTruthDepth: a ground-truth value used as a divisor is zero.
    """
    e, g = _match(est, gt)
    if quantity == "depth":
        ze, zg = e[:, 2], g[:, 2]
        err = np.abs(ze - zg)
    elif quantity == "euclidean":
        ze, zg = np.linalg.norm(e, axis=1), np.linalg.norm(g, axis=1)
        err = np.linalg.norm(e - g, axis=1)
    else:
        raise ValidationError(f"unknown quantity {quantity!r}")
    if np.any(zg == 0):
        raise ZeroGroundTruthDepth("ground-truth depth is zero for a matched point")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(ze / zg, zg / ze)
    ratio = np.where(np.isfinite(ratio) & (ratio > 0), ratio, np.inf)
    return MetricsReport(
        abs_rel=float(np.mean(err / np.abs(zg))),
        abs_diff=float(np.mean(err)),
        rms=float(np.sqrt(np.mean(err**2))),
        delta1=float(np.mean(ratio < DELTA_BASE)),
        delta2=float(np.mean(ratio < DELTA_BASE**2)),
        delta3=float(np.mean(ratio < DELTA_BASE**3)),
        n_points=len(zg),
        frame=frame,
        quantity=quantity,
    )


def distortion_summary(gs_obs: ObservationSet, rs_obs: ObservationSet) -> dict:
    """Image-space displacement between matched GS and RS observations.

    Observations are matched on (point_id, row, col).
    """
    def keyed(obs):
        return {(int(p), int(r), int(c)): (x, y) for p, r, c, x, y in zip(obs.point_id, obs.row, obs.col, obs.x, obs.y)}

    a, b = keyed(gs_obs), keyed(rs_obs)
    common = sorted(set(a) & set(b))
    if not common:
        raise NoMatches("no (point, viewpoint) pair is observed in both sets")
    d = np.array([np.hypot(a[k][0] - b[k][0], a[k][1] - b[k][1]) for k in common])
    return {"max": float(d.max()), "mean": float(d.mean()), "n": len(d)}


def metrics_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
