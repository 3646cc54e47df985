"""Joint shape-and-motion bundle adjustment for rolling-shutter light fields.

Unknowns are the normalised points ``n_p``, the centre of rotation ``g``, the
rotation vector ``omega = Omega * a`` and the linear velocity ``v``. A point
observed through viewpoint (row, col) is predicted as

    p = scale * n_p + g
    q = g + exp(omega * tau * row) (p - g) + v * tau * row
    (u, v, w) = K(s, t) (q, 1),   (x, y) = (u / w, v / w)

and the cost is the plain sum of squared image residuals. The camera frame at
row 0 is the world frame. Minimisation is Adam on the analytic gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from rslf.data import ObservationSet, PointCloud
from rslf.errors import DepthDegenerate, NonFinite, NotObservable, ValidationError
from rslf.geometry import DEFAULT_W_EPSILON, MotionState, left_jacobian, rotation_from_vector
from rslf.simulate import ObservabilityReport, check_observability
from rslf.triangulate import InitReport

log = logging.getLogger(__name__)

MIN_SCALE = 1e-9


class Mode(str, Enum):
    FULL = "Full"
    NO_INIT = "NoInit"
    NO_REG = "NoReg"
    NO_RS = "NoRS"


@dataclass(frozen=True)
class NormalizationFrame:
    center: np.ndarray
    scale: float

    def to_normalized(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) / self.scale

    def to_world(self, normalized) -> np.ndarray:
        return self.scale * np.asarray(normalized, dtype=float) + self.center


def normalize(init: PointCloud) -> tuple[np.ndarray, NormalizationFrame]:
    """Centre on the mean point and scale so every coordinate lies in [-1, 1]."""
    pts = np.asarray(init.points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValidationError("cannot normalise an empty point cloud")
    g = pts.mean(axis=0)
    scale = max(float(np.abs(pts - g).max()), MIN_SCALE)
    frame = NormalizationFrame(g, scale)
    return frame.to_normalized(pts), frame


@dataclass
class Params:
    """Free variables of the reprojection problem (also used for gradients)."""

    points: np.ndarray
    center: np.ndarray
    omega: np.ndarray
    velocity: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.points.ravel(), self.center, self.omega, self.velocity])

    @classmethod
    def unflat(cls, theta: np.ndarray, n_points: int) -> "Params":
        k = 3 * n_points
        return cls(
            theta[:k].reshape(n_points, 3),
            theta[k : k + 3],
            theta[k + 3 : k + 6],
            theta[k + 6 : k + 9],
        )

    def copy(self) -> "Params":
        return Params(self.points.copy(), self.center.copy(), self.omega.copy(), self.velocity.copy())


@dataclass
class SolveConfig:
    learning_rate: float = 0.01
    iterations: int = 5000
    mode: Mode = Mode.FULL
    gradient_check: bool = False
    w_epsilon: float = DEFAULT_W_EPSILON
    convergence_tol: float | None = None
    # None raises on a degenerate projection; a float is used as the residual instead.
    degenerate_residual: float | None = None
    force: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if int(self.iterations) < 1:
            raise ValidationError("iterations must be >= 1")
        self.iterations = int(self.iterations)

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "iterations": self.iterations,
            "mode": self.mode.value,
            "gradient_check": self.gradient_check,
            "w_epsilon": self.w_epsilon,
            "convergence_tol": self.convergence_tol,
            "degenerate_residual": self.degenerate_residual,
            "force": self.force,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SolveConfig":
        known = set(cls().to_dict())
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"solve config: unknown field(s) {', '.join(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"solve config: {exc}") from exc


@dataclass
class SolveReport:
    points: PointCloud
    motion: MotionState
    epsilon_trace: list[float]
    observability: ObservabilityReport | None
    mode: Mode
    config: SolveConfig
    gradient_error: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def final_epsilon(self) -> float:
        return self.epsilon_trace[-1]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "final_epsilon": self.final_epsilon,
            "iterations_run": len(self.epsilon_trace) - 1,
            "motion": self.motion.to_dict(),
            "normalization": {
                "center": None if self.points.center is None else self.points.center.tolist(),
                "scale": self.points.scale,
            },
            "points": {str(i): p.tolist() for i, p in zip(self.points.ids, self.points.points)},
            "observability": None if self.observability is None else self.observability.to_dict(),
            "gradient_error": self.gradient_error,
            "config": self.config.to_dict(),
            "epsilon_trace": list(self.epsilon_trace),
        }


class ReprojectionProblem:
    """Vectorised residuals and gradient of the rolling-shutter reprojection cost.

    ``point_ids`` fixes the order of ``Params.points``; every observation's
    point id must appear in it. The displaced point depends only on the
    (point, row) pair, so rotations are applied once per pair and only the
    perspective division runs per observation.
    """

    def __init__(
        self,
        obs: ObservationSet,
        point_ids,
        scale: float,
        w_epsilon: float = DEFAULT_W_EPSILON,
        degenerate_residual: float | None = None,
    ):
        intr = obs.intr
        self.obs = obs
        self.point_ids = np.asarray(point_ids, dtype=np.int64)
        self.scale = float(scale)
        self.w_epsilon = w_epsilon
        self.degenerate_residual = degenerate_residual
        lookup = {int(p): k for k, p in enumerate(self.point_ids)}
        try:
            pidx = np.array([lookup[int(p)] for p in obs.point_id], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"observation of point {exc.args[0]} has no initial estimate") from None
        self.rows, ridx = np.unique(obs.row, return_inverse=True)
        self.times = intr.tau * self.rows.astype(float)
        pairs, self.pair_of_obs = np.unique(pidx * len(self.rows) + ridx, return_inverse=True)
        self.pair_point = pairs // len(self.rows)
        self.pair_row = pairs % len(self.rows)
        self.pair_time = self.times[self.pair_row]

        s, t = intr.metric(obs.row, obs.col)
        f = intr.f
        ex, ey = intr.Ox - s, intr.Oy - t
        self.f, self.d = f, intr.d
        self.depth_coeff = 1.0 - intr.d / intr.F
        self.k2x, self.k2y = -(f / intr.F) * ex, -(f / intr.F) * ey
        self.k3x, self.k3y = f * ex, f * ey
        self.target = np.stack([obs.x, obs.y], axis=1)

    @property
    def n_points(self) -> int:
        return len(self.point_ids)

    def _forward(self, params: Params):
        R = rotation_from_vector(params.omega[None, :] * self.times[:, None])
        y = self.scale * params.points[self.pair_point]
        Ry = np.einsum("kij,kj->ki", R[self.pair_row], y)
        q_pair = params.center + Ry + params.velocity * self.pair_time[:, None]
        q = q_pair[self.pair_of_obs]
        u = self.f * q[:, 0] + self.k2x * q[:, 2] + self.k3x
        v = self.f * q[:, 1] + self.k2y * q[:, 2] + self.k3y
        w = self.depth_coeff * q[:, 2] + self.d
        bad = ~(np.abs(w) >= self.w_epsilon)
        if bad.any():
            if self.degenerate_residual is None:
                k = int(np.flatnonzero(bad)[0])
                raise DepthDegenerate(
                    f"point {self.obs.point_id[k]} is degenerate in viewpoint "
                    f"({self.obs.row[k]}, {self.obs.col[k]})"
                )
            w = np.where(bad, 1.0, w)
        pred = np.empty_like(self.target)
        pred[:, 0] = u / w
        pred[:, 1] = v / w
        res = self.target - pred
        if bad.any():
            res[bad] = self.degenerate_residual
        return R, Ry, pred, res, w, bad

    def residual(self, params: Params) -> np.ndarray:
        """Interleaved ``(x_obs - x_pred, y_obs - y_pred)`` for every observation."""
        return self._forward(params)[3].ravel()

    def cost(self, params: Params) -> float:
        r = self.residual(params)
        return float(r @ r)

    def predict(self, params: Params) -> np.ndarray:
        return self._forward(params)[2]

    def cost_and_gradient(self, params: Params) -> tuple[float, Params]:
        R, Ry, pred, res, w, bad = self._forward(params)
        eps = float(np.sum(res * res))
        rx, ry = res[:, 0], res[:, 1]
        if bad.any():
            rx = np.where(bad, 0.0, rx)
            ry = np.where(bad, 0.0, ry)
        c = self.depth_coeff
        scale_x = -2.0 * rx / w
        scale_y = -2.0 * ry / w
        # d eps / d q, accumulated per (point, row) pair
        k = len(self.pair_point)
        gx = np.bincount(self.pair_of_obs, weights=scale_x * self.f, minlength=k)
        gy = np.bincount(self.pair_of_obs, weights=scale_y * self.f, minlength=k)
        gz_obs = scale_x * (self.k2x - pred[:, 0] * c) + scale_y * (self.k2y - pred[:, 1] * c)
        gz = np.bincount(self.pair_of_obs, weights=gz_obs, minlength=k)
        Gq = np.stack([gx, gy, gz], axis=1)

        n = self.n_points
        RtG = np.einsum("kji,kj->ki", R[self.pair_row], Gq)
        g_points = np.empty((n, 3))
        for axis in range(3):
            g_points[:, axis] = np.bincount(self.pair_point, weights=RtG[:, axis], minlength=n)
        g_points *= self.scale
        g_center = Gq.sum(axis=0)
        g_velocity = self.pair_time @ Gq

        cross = np.cross(Ry, Gq)
        nr = len(self.rows)
        per_row = np.empty((nr, 3))
        for axis in range(3):
            per_row[:, axis] = np.bincount(self.pair_row, weights=cross[:, axis], minlength=nr)
        J = left_jacobian(params.omega[None, :] * self.times[:, None])
        g_omega = np.einsum("r,rji,rj->i", self.times, J, per_row)
        return eps, Params(g_points, g_center, g_omega, g_velocity)


def _mask_for(mode: Mode, n_points: int) -> Params:
    """1 where a parameter is free, 0 where it is frozen by the ablation mode."""
    ones = Params(np.ones((n_points, 3)), np.ones(3), np.ones(3), np.ones(3))
    if mode is Mode.NO_REG:
        ones.center[:] = 0.0
    if mode is Mode.NO_RS:
        ones.omega[:] = 0.0
        ones.velocity[:] = 0.0
    return ones


def residual(params: Params, obs: ObservationSet, scale: float, point_ids=None) -> np.ndarray:
    """Residual vector of length ``2 * len(obs)``; its squared norm is the cost."""
    ids = np.unique(obs.point_id) if point_ids is None else point_ids
    return ReprojectionProblem(obs, ids, scale).residual(params)


def gradient(
    params: Params, obs: ObservationSet, scale: float, mode: Mode = Mode.FULL, point_ids=None
) -> Params:
    """Exact gradient of the cost, zeroed on parameters the mode freezes."""
    ids = np.unique(obs.point_id) if point_ids is None else point_ids
    _, grad = ReprojectionProblem(obs, ids, scale).cost_and_gradient(params)
    n = len(ids)
    mask = _mask_for(Mode(mode), n)
    return Params.unflat(grad.flat() * mask.flat(), n)


def finite_difference_gradient(problem: ReprojectionProblem, params: Params, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences of the cost, step ``rel_step * max(1, |theta_k|)``."""
    theta = params.flat()
    n = problem.n_points
    out = np.empty_like(theta)
    for k in range(len(theta)):
        h = rel_step * max(1.0, abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        out[k] = (problem.cost(Params.unflat(tp, n)) - problem.cost(Params.unflat(tm, n))) / (2 * h)
    return out


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max over coordinates of ``|a - n| / max(|a|, |n|, floor)``.

    The floor is a small fraction of the largest gradient entry so that
    coordinates whose true derivative is zero do not divide by noise.
    """
    floor = 1e-6 * max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def initial_params(init: InitReport | PointCloud, mode: Mode) -> tuple[np.ndarray, Params, NormalizationFrame]:
    """Starting point ids, parameters and normalisation for a solve mode."""
    cloud = init.points if isinstance(init, InitReport) else init
    ids = cloud.ids.copy()
    n = len(ids)
    if mode is Mode.NO_REG:
        frame = NormalizationFrame(np.zeros(3), 1.0)
        pts = cloud.points.copy()
    else:
        pts, frame = normalize(cloud)
    if mode is Mode.NO_INIT:
        # every point starts at the centroid of the linear estimate
        pts = np.zeros((n, 3))
    params = Params(pts, frame.center.copy(), np.zeros(3), np.zeros(3))
    return ids, params, frame


ROTATION_STEP_FACTOR = 3.0


def step_units(problem: ReprojectionProblem) -> Params:
    """Per-parameter units of the optimiser's variables.

    Points and centre are already normalised. Velocity is optimised as the
    displacement accumulated over one frame (all rows), rotation as the angle
    accumulated over a third of a frame. Coarser rotation units let the
    solver escape the shallow basins of fast rotations; finer ones keep slow
    rotation rates accurate to well under a percent.
    """
    intr = problem.obs.intr
    span = intr.rows * intr.tau
    per_frame = 1.0 / span if span > 0 else 1.0
    n = problem.n_points
    return Params(
        np.ones((n, 3)), np.ones(3), np.full(3, ROTATION_STEP_FACTOR * per_frame), np.full(3, per_frame)
    )


def adam(
    problem: ReprojectionProblem,
    start: Params,
    mask: Params,
    cfg: SolveConfig,
    units: Params | None = None,
) -> tuple[Params, list[float]]:
    """Fixed-rate Adam with bias correction on ``z = theta / units``.

    Returns the final parameters (in physical units) and the cost trace, whose
    first entry is the starting cost and last entry the final cost.
    """
    n = problem.n_points
    unit = np.ones(3 * n + 9) if units is None else units.flat()
    z = start.flat() / unit
    free = mask.flat()
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    b1, b2, lr, eps_adam = cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.adam_eps
    trace: list[float] = []
    window = 100
    for it in range(cfg.iterations):
        with np.errstate(over="ignore", invalid="ignore"):
            cost, grad = problem.cost_and_gradient(Params.unflat(z * unit, n))
        trace.append(cost)
        g = grad.flat() * unit * free
        if not (np.isfinite(cost) and np.all(np.isfinite(g))):
            raise NonFinite(f"cost or gradient became non-finite at iteration {it}", it)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** (it + 1))
        v_hat = v / (1 - b2 ** (it + 1))
        z = z - lr * m_hat / (np.sqrt(v_hat) + eps_adam)
        if not np.all(np.isfinite(z)):
            raise NonFinite(f"parameters became non-finite at iteration {it}", it)
        if cfg.convergence_tol is not None and it >= window and it % window == 0:
            old = trace[it - window]
            if old > 0 and (old - cost) / old < cfg.convergence_tol:
                log.info("converged at iteration %d (cost %.3e)", it, cost)
                break
    final = Params.unflat(z * unit, n)
    with np.errstate(over="ignore", invalid="ignore"):
        final_cost = problem.cost(final)
    if not np.isfinite(final_cost):
        raise NonFinite("final cost is non-finite", len(trace))
    trace.append(final_cost)
    return final, trace


def solve(obs: ObservationSet, init: InitReport, cfg: SolveConfig | None = None) -> SolveReport:
    """Refine the linear estimate into points and camera motion.

    Raises:
        NotObservable: observability pre-check failed and ``cfg.force`` is off.
        NonFinite: the optimisation diverged.
    """
    cfg = cfg or SolveConfig()
    mode = cfg.mode
    cloud = init.points if isinstance(init, InitReport) else init
    observability = check_observability(obs, cloud)
    if not observability.observable and not cfg.force:
        raise NotObservable("; ".join(observability.reasons))

    used = np.isin(obs.point_id, cloud.ids)
    if not used.all():
        log.warning("dropping %d observations of points without an initial estimate", int((~used).sum()))
        obs = obs.subset(used)
    ids, start, frame = initial_params(cloud, mode)
    problem = ReprojectionProblem(obs, ids, frame.scale, cfg.w_epsilon, cfg.degenerate_residual)
    mask = _mask_for(mode, len(ids))

    gradient_error = None
    if cfg.gradient_check:
        _, grad = problem.cost_and_gradient(start)
        numeric = finite_difference_gradient(problem, start)
        gradient_error = gradient_relative_error(grad.flat() * mask.flat(), numeric * mask.flat())

    final, trace = adam(problem, start, mask, cfg, step_units(problem))
    center = final.center if mode is not Mode.NO_REG else np.zeros(3)
    world = problem.scale * final.points + center
    points = PointCloud(ids, world, center=center, scale=frame.scale)
    motion = MotionState.from_rotation_vector(final.omega, final.velocity, center)
    return SolveReport(points, motion, trace, observability, mode, cfg, gradient_error)


def with_mode(cfg: SolveConfig, mode: Mode | str) -> SolveConfig:
    return replace(cfg, mode=Mode(mode))
