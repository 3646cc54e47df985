"""Synthetic rigid scenes, the benchmark velocity scenarios, and sparse RS renders.

The simulator forward-renders world points through the rolling-shutter model
to fabricate perfectly matched observations with known ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from rslf.data import ObservationSet, PointCloud
from rslf.errors import EmptyObservations, ValidationError
from rslf.geometry import (
    DEFAULT_W_EPSILON,
    CameraPose,
    LightFieldIntrinsics,
    MotionState,
    axis_angle_matrix,
    displace,
    project_camera_points,
    vector_from_rotation,
)

GS, SLOW, FAST = "GS", "slow", "fast"
CLASS_ORDER = (GS, SLOW, FAST)
SCENE_DEPTH = 7.0

# Per-frame velocities of the eleven benchmark sequences:
# (euler XYZ rotation in rad/frame, translation in m/frame).
_SCENARIO_TABLE = {
    0: ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
    1: ((0.0, 0.0, math.pi / 12), (0.0, 0.0, 0.0)),
    2: ((0.0, 0.0, 0.0), (0.0, -0.2, 0.0)),
    3: ((-math.pi / 18, 0.0, 0.0), (0.0, -0.05, 0.05)),
    4: ((math.pi / 18, math.pi / 18, 0.0), (0.0, 0.0, 0.2)),
    5: ((0.0, 0.0, math.pi / 12), (0.0, -0.2, 0.0)),
    6: ((0.0, 0.0, math.pi / 3), (0.0, 0.0, 0.0)),
    7: ((0.0, 0.0, 0.0), (0.0, -0.8, 0.0)),
    8: ((-math.pi / 3, 0.0, 0.0), (0.0, 0.4, 0.2)),
    9: ((2 * math.pi / 9, 0.0, 0.0), (0.4, -1.6, -0.8)),
    10: ((0.0, 0.0, math.pi / 2), (0.0, -0.8, 0.0)),
}


def scenario_class(scenario_id: int) -> str:
    if scenario_id == 0:
        return GS
    if 1 <= scenario_id <= 5:
        return SLOW
    if 6 <= scenario_id <= 10:
        return FAST
    raise ValidationError(f"scenario id must be in 0..10, got {scenario_id}")


@dataclass(frozen=True)
class MotionScenario:
    id: int
    euler_rotation: tuple[float, float, float]
    translation: tuple[float, float, float]

    @property
    def kind(self) -> str:
        return scenario_class(self.id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class": self.kind,
            "euler_rotation": list(self.euler_rotation),
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MotionScenario":
        sc = cls(int(data["id"]), tuple(map(float, data["euler_rotation"])), tuple(map(float, data["translation"])))
        scenario_class(sc.id)
        if "class" in data and data["class"] != sc.kind:
            raise ValidationError(f"scenario {sc.id} is {sc.kind!r}, file says {data['class']!r}")
        if sc.id == 0 and (any(sc.euler_rotation) or any(sc.translation)):
            raise ValidationError("scenario 0 is the static case and must have zero velocities")
        return sc


def scenario(scenario_id: int) -> MotionScenario:
    """The benchmark scenario with the given id (0 static, 1-5 slow, 6-10 fast)."""
    scenario_class(scenario_id)
    euler, trans = _SCENARIO_TABLE[scenario_id]
    return MotionScenario(scenario_id, euler, trans)


def all_scenarios() -> list[MotionScenario]:
    return [scenario(i) for i in range(11)]


def euler_xyz_matrix(angles) -> np.ndarray:
    """Intrinsic X-Y-Z Euler angles to a rotation matrix (``Rx @ Ry @ Rz``)."""
    ax, ay, az = angles
    Rx = axis_angle_matrix((1.0, 0.0, 0.0), ax)
    Ry = axis_angle_matrix((0.0, 1.0, 0.0), ay)
    Rz = axis_angle_matrix((0.0, 0.0, 1.0), az)
    return Rx @ Ry @ Rz


def scenario_to_motion(sc: MotionScenario, frame_rows: int, center=None) -> MotionState:
    """Uniform motion reaching the scenario's per-frame rotation after one frame.

    Velocities stay in per-frame units; the matching row delay is
    ``tau = 1 / frame_rows`` frames (see :func:`default_rig`).
    """
    if frame_rows < 1:
        raise ValidationError("frame_rows must be >= 1")
    omega = vector_from_rotation(euler_xyz_matrix(sc.euler_rotation))
    center = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    return MotionState.from_rotation_vector(omega, sc.translation, center)


def default_rig(frame_rows: int | None = None) -> LightFieldIntrinsics:
    """9x9 viewpoints, 6 mm apart, behind a 50 mm main lens.

    The micro-lens focal length (1 mm) and view-plane distance (60 mm) are
    fixed choices; ``d > F`` keeps the depth row of the tensor non-degenerate.
    One frame spans ``frame_rows`` viewpoint rows (default: the grid height).
    """
    rows = cols = 9
    pitch = 0.006
    frame_rows = rows if frame_rows is None else frame_rows
    if frame_rows < 1:
        raise ValidationError("frame_rows must be >= 1")
    return LightFieldIntrinsics(
        F=0.05,
        f=0.001,
        d=0.06,
        Ox=0.0,
        Oy=0.0,
        tau=1.0 / frame_rows,
        rows=rows,
        cols=cols,
        pitch=pitch,
        origin_s=-pitch * (cols - 1) / 2,
        origin_t=-pitch * (rows - 1) / 2,
    )


@dataclass
class Scene:
    points: np.ndarray
    name: str = "scene"
    rng_seed: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValidationError(f"scene {self.name!r}: coordinates must be finite")

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def cloud(self) -> PointCloud:
        return PointCloud(np.arange(len(self.points)), self.points.copy())

    def to_dict(self) -> dict:
        return {"name": self.name, "rng_seed": self.rng_seed, "points": self.points.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        try:
            return cls(np.asarray(data["points"], dtype=float), str(data.get("name", "scene")), int(data.get("rng_seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"scene: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def random_scene(
    n_points: int = 50,
    seed: int = 0,
    center=(0.0, 0.0, SCENE_DEPTH),
    half_extent=(1.0, 1.0, 1.0),
    name: str | None = None,
) -> Scene:
    """Uniform random points in a box (almost surely non-coplanar for n >= 4)."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(center) - np.asarray(half_extent)
    hi = np.asarray(center) + np.asarray(half_extent)
    points = rng.uniform(lo, hi, size=(n_points, 3))
    return Scene(points, name or f"random-{n_points}-{seed}", seed)


def chart_scene(per_side: int = 5, size: float = 2.0, apex=(0.25, 0.15, 6.6)) -> Scene:
    """Two square grids meeting at a right angle, fold facing the camera.

    The fold runs along y through ``apex``; each wing recedes at 45 degrees.
    The centroid is deliberately off the optical axis.
    """
    apex = np.asarray(apex, dtype=float)
    u = np.linspace(size / (2 * per_side), size, per_side)
    y = np.linspace(-size / 2, size / 2, per_side)
    uu, yy = np.meshgrid(u, y, indexing="ij")
    uu, yy = uu.ravel(), yy.ravel()
    c = math.sqrt(0.5)
    right = np.stack([apex[0] + c * uu, apex[1] + yy, apex[2] + c * uu], axis=1)
    left = np.stack([apex[0] - c * uu, apex[1] + yy, apex[2] + c * uu], axis=1)
    return Scene(np.vstack([right, left]), "chart", 0)


def standard_scene() -> Scene:
    return chart_scene()


def simulate(
    scene: Scene,
    sc: MotionScenario,
    intr: LightFieldIntrinsics,
    noise_sigma: float = 0.0,
    seed: int = 0,
    *,
    motion: MotionState | None = None,
    pose: CameraPose | None = None,
    fov_half_angle: float | None = None,
    w_epsilon: float = DEFAULT_W_EPSILON,
) -> ObservationSet:
    """Render every scene point through every viewpoint under the scenario motion.

    The motion rotates about the scene centroid unless ``motion`` is given.
    Gaussian noise is drawn for every (point, row, col) in that order, whether
    or not the projection survives, so the stream never depends on visibility.

    Raises:
        EmptyObservations: if no projection is usable.
    """
    if len(scene.points) == 0:
        raise ValidationError("cannot simulate an empty scene")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be >= 0")
    if motion is None:
        motion = scenario_to_motion(sc, intr.rows, scene.centroid)
    pose = pose or CameraPose.identity()

    n = len(scene.points)
    pid, row, col = np.meshgrid(np.arange(n), np.arange(intr.rows), np.arange(intr.cols), indexing="ij")
    pid, row, col = pid.ravel(), row.ravel(), col.ravel()
    q = displace(pose.apply(scene.points)[pid], motion, intr.tau, row)
    x, y, w = project_camera_points(q, intr, row, col)

    noise = np.random.default_rng(seed).normal(0.0, 1.0, size=(len(pid), 2)) * noise_sigma
    keep = np.abs(w) >= w_epsilon
    if fov_half_angle is not None:
        off_axis = np.arctan2(np.hypot(q[:, 0], q[:, 1]), q[:, 2])
        keep &= off_axis <= fov_half_angle
    if not keep.any():
        raise EmptyObservations(f"scene {scene.name!r}: every projection is degenerate or filtered")
    return ObservationSet(
        intr,
        pid[keep],
        row[keep],
        col[keep],
        x[keep] + noise[keep, 0],
        y[keep] + noise[keep, 1],
        float(noise_sigma),
        int(seed),
    )


@dataclass
class ObservabilityReport:
    n_points: int
    n_rows: int
    n_cols: int
    non_coplanar: bool | None
    reasons: list[str] = field(default_factory=list)

    @property
    def observable(self) -> bool:
        return not self.reasons

    def __bool__(self) -> bool:
        return self.observable

    def to_dict(self) -> dict:
        return {
            "observable": self.observable,
            "n_points": self.n_points,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "non_coplanar": self.non_coplanar,
            "reasons": list(self.reasons),
        }


def is_non_coplanar(points, rel_tol: float = 1e-9) -> bool:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 4:
        return False
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return bool(sv[-1] > rel_tol * sv[0])


def check_observability(obs: ObservationSet, scene_hint: PointCloud | None = None) -> ObservabilityReport:
    """Can shape and motion be separated from these observations?

    Needs four distinct points seen across at least two viewpoint rows and two
    columns, and, when 3D estimates are supplied, those points must not all lie
    on one plane. Never raises.
    """
    n_points = len(np.unique(obs.point_id))
    n_rows = len(np.unique(obs.row))
    n_cols = len(np.unique(obs.col))
    reasons = []
    if n_points < 4:
        reasons.append(f"need at least 4 distinct points, got {n_points}")
    if n_rows < 2 or n_cols < 2:
        reasons.append(
            f"points must be seen on at least two different rows and two different columns "
            f"of viewpoints (rows={n_rows}, columns={n_cols})"
        )
    non_coplanar = None
    if scene_hint is not None:
        seen = np.isin(scene_hint.ids, obs.point_id)
        non_coplanar = is_non_coplanar(scene_hint.points[seen])
        if not non_coplanar:
            reasons.append("the observed 3D points are coplanar (need four non-coplanar points)")
    return ObservabilityReport(n_points, n_rows, n_cols, non_coplanar, reasons)
