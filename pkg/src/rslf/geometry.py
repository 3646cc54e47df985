"""Rolling-shutter light-field camera geometry.

A world point is moved into the camera frame, displaced by the camera motion
accumulated up to the exposure of its viewpoint row, pushed through the main
thin lens, shifted onto the micro-lens (view) plane and finally imaged by the
pinhole micro-lens centred at the viewpoint ``(s, t)``.

Conventions:
    - Lengths are metres, image coordinates are metric micro-image
      coordinates (no pixel pitch).
    - Time is ``tau * row``: viewpoint rows are exposed ``tau`` apart and
      row 0 is the reference instant. The metric ``t`` of a viewpoint only
      enters the intrinsic tensor.
    - Motion rotates about the centre ``g``:
      ``q = g + dR(row) (R_cw p + T_cw - g) + dT(row)``. With ``g = 0`` this
      is the plain rolling-shutter pose ``[dR R_cw | T_cw + dT]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from rslf.errors import DepthDegenerate, ReductionUndefined, ValidationError

DEFAULT_W_EPSILON = 1e-12
_SMALL_ANGLE = 1e-6


def skew(v) -> np.ndarray:
    """Cross-product matrix ``[v]_x`` so that ``skew(a) @ b == cross(a, b)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def axis_angle_matrix(axis, angle) -> np.ndarray:
    """Rodrigues rotation ``a a^T (1 - cos) + I cos + [a]_x sin``.

    ``axis`` may be (..., 3) and ``angle`` broadcast against its leading
    dimensions. The axis is used as given (callers supply unit vectors).
    """
    a = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    a = np.broadcast_to(a, angle.shape + (3,))
    outer = a[..., :, None] * a[..., None, :]
    return outer * (1.0 - c) + np.eye(3) * c + skew(a) * s


def rotation_from_vector(rotvec) -> np.ndarray:
    """Exponential map from rotation vectors (..., 3) to matrices (..., 3, 3)."""
    phi = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = skew(phi)
    K2 = K @ K
    th = theta[..., None, None]
    small = th < _SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    sin_term = np.where(small, 1.0 - th**2 / 6.0, np.sin(safe) / safe)
    cos_term = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + sin_term * K + cos_term * K2


def left_jacobian(rotvec) -> np.ndarray:
    """SO(3) left Jacobian: ``d(exp(phi) y)/d phi = -[exp(phi) y]_x J_l(phi)``."""
    phi = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    K = skew(phi)
    K2 = K @ K
    th = theta[..., None, None]
    small = th < _SMALL_ANGLE
    safe = np.where(small, 1.0, th)
    b = np.where(small, 0.5 - th**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    c = np.where(small, 1.0 / 6.0 - th**2 / 120.0, (safe - np.sin(safe)) / safe**3)
    return np.eye(3) + b * K + c * K2


def vector_from_rotation(R) -> np.ndarray:
    """Logarithm of a single rotation matrix, angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < _SMALL_ANGLE:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from R + I.
        B = (R + np.eye(3)) / 2.0
        axis = B[np.argmax(np.diag(B))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


@dataclass(frozen=True)
class Viewpoint:
    row: int
    col: int
    s: float
    t: float


@dataclass(frozen=True)
class LightFieldIntrinsics:
    """Calibrated optics of the rolling-shutter plenoptic camera.

    Attributes:
        F: Main-lens focal length (m).
        f: Micro-lens focal length, view plane to image plane (m).
        Ox, Oy: Intersection of the optical axis with the view plane (m).
        d: Main-lens optical centre to view plane distance (m).
        tau: Delay between the exposures of two consecutive viewpoint rows.
        rows, cols: Viewpoint grid size.
        pitch: Metric spacing between adjacent viewpoints (m).
        origin_s, origin_t: Metric position of viewpoint (row=0, col=0).
    """

    F: float
    f: float
    d: float
    Ox: float = 0.0
    Oy: float = 0.0
    tau: float = 0.0
    rows: int = 9
    cols: int = 9
    pitch: float = 0.006
    origin_s: float = 0.0
    origin_t: float = 0.0

    def __post_init__(self):
        for name in ("F", "f", "d", "pitch"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"intrinsics: {name} must be > 0, got {value!r}")
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValidationError(f"intrinsics: tau must be >= 0, got {self.tau!r}")
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValidationError("intrinsics: grid needs at least one row and one column")
        for name in ("Ox", "Oy", "origin_s", "origin_t"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"intrinsics: {name} must be finite")

    def viewpoint(self, row: int, col: int) -> Viewpoint:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValidationError(f"viewpoint ({row}, {col}) outside {self.rows}x{self.cols} grid")
        s, t = self.metric(row, col)
        return Viewpoint(int(row), int(col), float(s), float(t))

    def metric(self, row, col):
        """Metric ``(s, t)`` of grid indices; vectorised over arrays."""
        s = self.origin_s + self.pitch * np.asarray(col, dtype=float)
        t = self.origin_t + self.pitch * np.asarray(row, dtype=float)
        return s, t

    def viewpoints(self) -> Iterator[Viewpoint]:
        for row in range(self.rows):
            for col in range(self.cols):
                yield self.viewpoint(row, col)

    def to_dict(self) -> dict:
        return {
            "F": self.F,
            "f": self.f,
            "Ox": self.Ox,
            "Oy": self.Oy,
            "d": self.d,
            "tau": self.tau,
            "rows": self.rows,
            "cols": self.cols,
            "pitch": self.pitch,
            "origin_s": self.origin_s,
            "origin_t": self.origin_t,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LightFieldIntrinsics":
        keys = ("F", "f", "Ox", "Oy", "d", "tau", "rows", "cols", "pitch", "origin_s", "origin_t")
        missing = [k for k in keys if k not in data]
        if missing:
            raise ValidationError(f"intrinsics: missing field(s) {', '.join(missing)}")
        unknown = sorted(set(data) - set(keys))
        if unknown:
            raise ValidationError(f"intrinsics: unknown field(s) {', '.join(unknown)}")
        try:
            kwargs = {k: float(data[k]) for k in keys if k not in ("rows", "cols")}
            rows, cols = data["rows"], data["cols"]
            if int(rows) != rows or int(cols) != cols:
                raise ValueError("rows/cols must be integers")
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"intrinsics: {exc}") from exc
        return cls(rows=int(rows), cols=int(cols), **kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LightFieldIntrinsics":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CameraPose:
    """Rigid world-to-camera transform ``p_c = R p_w + T``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        T = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-12 or abs(np.linalg.det(R) - 1.0) > 1e-12:
            raise ValidationError("pose rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", T)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class MotionState:
    """Uniform camera motion during one light-field exposure.

    Attributes:
        axis: Unit rotation axis (conventionally +z when not rotating).
        angular_speed: Rotation rate about ``axis`` (rad per time unit).
        linear_velocity: Translation rate (m per time unit).
        center: Point the rotation axis passes through (m).
    """

    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    angular_speed: float = 0.0
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float).reshape(3)
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "angular_speed", float(self.angular_speed))
        object.__setattr__(
            self, "linear_velocity", np.asarray(self.linear_velocity, dtype=float).reshape(3)
        )
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if self.angular_speed != 0.0 and abs(np.linalg.norm(a) - 1.0) > 1e-10:
            raise ValidationError("motion axis must be a unit vector when angular speed is nonzero")

    @classmethod
    def static(cls, center=(0.0, 0.0, 0.0)) -> "MotionState":
        return cls(center=np.asarray(center, dtype=float))

    @classmethod
    def from_rotation_vector(cls, omega, velocity=(0.0, 0.0, 0.0), center=(0.0, 0.0, 0.0)):
        """Build from ``omega = angular_speed * axis``."""
        omega = np.asarray(omega, dtype=float).reshape(3)
        speed = float(np.linalg.norm(omega))
        axis = omega / speed if speed > 0 else np.array([0.0, 0.0, 1.0])
        return cls(axis=axis, angular_speed=speed, linear_velocity=velocity, center=center)

    @property
    def rotation_vector(self) -> np.ndarray:
        return self.angular_speed * self.axis

    def is_static(self) -> bool:
        return self.angular_speed == 0.0 and not np.any(self.linear_velocity)

    def to_dict(self) -> dict:
        return {
            "axis": self.axis.tolist(),
            "angular_speed": self.angular_speed,
            "linear_velocity": self.linear_velocity.tolist(),
            "center": self.center.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MotionState":
        return cls(
            axis=data["axis"],
            angular_speed=data["angular_speed"],
            linear_velocity=data["linear_velocity"],
            center=data["center"],
        )


@dataclass(frozen=True)
class ImagePoint:
    x: float
    y: float
    viewpoint: Viewpoint
    point_id: int


def thin_lens_matrix(intr: LightFieldIntrinsics) -> np.ndarray:
    """4x4 main-lens projection acting on homogeneous camera-frame points."""
    Kc = np.eye(4)
    Kc[3, 2] = -1.0 / intr.F
    return Kc


def view_plane_matrix(intr: LightFieldIntrinsics) -> np.ndarray:
    """4x4 shift from the main-lens frame to the view (micro-lens) plane."""
    D = np.eye(4)
    D[:3, 3] = (intr.Ox, intr.Oy, intr.d)
    return D


def micro_lens_matrix(intr: LightFieldIntrinsics, s: float, t: float) -> np.ndarray:
    """3x4 pinhole projection through the micro-lens centred at ``(s, t, 0)``."""
    f = intr.f
    return np.array(
        [
            [f, 0.0, 0.0, -f * s],
            [0.0, f, 0.0, -f * t],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )


def intrinsic_tensor(intr: LightFieldIntrinsics, vp: Viewpoint) -> np.ndarray:
    """Compact 3x4 intrinsic matrix of viewpoint ``vp`` (closed form)."""
    return _tensor_rows(intr, np.float64(vp.s), np.float64(vp.t))


def _tensor_rows(intr: LightFieldIntrinsics, s, t) -> np.ndarray:
    # Broadcasts over arrays of s, t: result shape s.shape + (3, 4).
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    F, f, d = intr.F, intr.f, intr.d
    ex = intr.Ox - s
    ey = intr.Oy - t
    K = np.zeros(np.broadcast(s, t).shape + (3, 4))
    K[..., 0, 0] = f
    K[..., 0, 2] = -(f / F) * ex
    K[..., 0, 3] = f * ex
    K[..., 1, 1] = f
    K[..., 1, 2] = -(f / F) * ey
    K[..., 1, 3] = f * ey
    K[..., 2, 2] = 1.0 - d / F
    K[..., 2, 3] = d
    return K


def delta_rotation(motion: MotionState, tau: float, t_row) -> np.ndarray:
    """Rotation accumulated after ``t_row`` row delays; (..., 3, 3) for array rows."""
    theta = motion.angular_speed * tau * np.asarray(t_row, dtype=float)
    return axis_angle_matrix(motion.axis, theta)


def delta_translation(motion: MotionState, tau: float, t_row) -> np.ndarray:
    rows = np.asarray(t_row, dtype=float)
    return motion.linear_velocity * (tau * rows)[..., None]


def displace(points, motion: MotionState, tau: float, t_row) -> np.ndarray:
    """Camera-frame points moved to the exposure instant of ``t_row``.

    ``points`` is (..., 3) and ``t_row`` broadcasts against the leading shape.
    """
    p = np.asarray(points, dtype=float)
    rows = np.asarray(t_row)
    dR = delta_rotation(motion, tau, rows)
    dT = delta_translation(motion, tau, rows)
    g = motion.center
    return g + np.einsum("...ij,...j->...i", dR, p - g) + dT


def project_camera_points(q, intr: LightFieldIntrinsics, row, col):
    """Image already-displaced camera-frame points through viewpoints (row, col).

    Returns ``(x, y, w)`` arrays; ``w`` is the homogeneous scale, left for the
    caller to screen.
    """
    q = np.asarray(q, dtype=float)
    s, t = intr.metric(row, col)
    F, f, d = intr.F, intr.f, intr.d
    ex = intr.Ox - s
    ey = intr.Oy - t
    z = q[..., 2]
    u = f * q[..., 0] - (f / F) * ex * z + f * ex
    v = f * q[..., 1] - (f / F) * ey * z + f * ey
    w = (1.0 - d / F) * z + d
    with np.errstate(divide="ignore", invalid="ignore"):
        return u / w, v / w, w


def project(
    points,
    intr: LightFieldIntrinsics,
    row,
    col,
    motion: MotionState | None = None,
    pose: CameraPose | None = None,
):
    """Vectorised rolling-shutter projection of world points.

    Returns ``(x, y, w)``; entries where ``|w|`` is tiny are not screened here.
    """
    p = np.asarray(points, dtype=float)
    if pose is not None:
        p = pose.apply(p)
    if motion is not None and intr.tau != 0.0 and not motion.is_static():
        p = displace(p, motion, intr.tau, row)
    return project_camera_points(p, intr, row, col)


def project_point(
    p_w,
    pose: CameraPose,
    motion: MotionState,
    intr: LightFieldIntrinsics,
    vp: Viewpoint,
    point_id: int = 0,
    w_epsilon: float = DEFAULT_W_EPSILON,
) -> ImagePoint:
    """Project one world point through viewpoint ``vp`` at its row's exposure time."""
    q = displace(pose.apply(p_w), motion, intr.tau, vp.row)
    K = intrinsic_tensor(intr, vp)
    u, v, w = K[:, :3] @ q + K[:, 3]
    if not abs(w) >= w_epsilon:
        raise DepthDegenerate(
            f"point {point_id} lies on the plane of viewpoint ({vp.row}, {vp.col}) (w={w:.3g})"
        )
    return ImagePoint(float(u / w), float(v / w), vp, point_id)


def gs_projection(
    p_w,
    pose: CameraPose,
    intr: LightFieldIntrinsics,
    vp: Viewpoint,
    point_id: int = 0,
    w_epsilon: float = DEFAULT_W_EPSILON,
) -> ImagePoint:
    """Global-shutter projection: every row sees the reference-instant pose."""
    p_c = pose.apply(p_w)
    Kc = thin_lens_matrix(intr)
    D = view_plane_matrix(intr)
    Ks = micro_lens_matrix(intr, vp.s, vp.t)
    u, v, w = Ks @ (D @ (Kc @ np.append(p_c, 1.0)))
    if not abs(w) >= w_epsilon:
        raise DepthDegenerate(
            f"point {point_id} lies on the plane of viewpoint ({vp.row}, {vp.col}) (w={w:.3g})"
        )
    return ImagePoint(float(u / w), float(v / w), vp, point_id)


def pinhole_reduction(intr: LightFieldIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Factor the central-viewpoint tensor into a pinhole ``K' @ D'``.

    ``K'`` has focal ``f`` and principal point ``c = (d/F - 1)(f/F) O``.
    ``D'`` is then fixed by requiring ``K' @ D' == K(s=0, t=0)``:

        D' = [[1, 0, -O_x/F - (c_x/f)(1 - d/F), O_x - c_x d/f],
              [0, 1, -O_y/F - (c_y/f)(1 - d/F), O_y - c_y d/f],
              [0, 0, 1 - d/F,                   d            ]]

    Raises:
        ReductionUndefined: if either principal offset component is zero.
    """
    F, f, d = intr.F, intr.f, intr.d
    Ox, Oy = intr.Ox, intr.Oy
    if Ox == 0.0 or Oy == 0.0:
        raise ReductionUndefined("pinhole reduction needs a principal offset with Ox != 0 and Oy != 0")
    scale = (d / F - 1.0) * (f / F)
    cx, cy = scale * Ox, scale * Oy
    K_prime = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
    depth = 1.0 - d / F
    D_prime = np.array(
        [
            [1.0, 0.0, -Ox / F - (cx / f) * depth, Ox - cx * d / f],
            [0.0, 1.0, -Oy / F - (cy / f) * depth, Oy - cy * d / f],
            [0.0, 0.0, depth, d],
        ]
    )
    return K_prime, D_prime
