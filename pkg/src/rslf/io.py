"""On-disk formats: observation CSV + sidecar, JSON artefacts, ASCII PLY, manifests.

Every writer is deterministic (sorted keys, shortest round-trip floats, no
timestamps) and atomic (write to a temporary file, then rename).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rslf import TOOL_NAME, __version__
from rslf.bundle import Mode, SolveConfig, SolveReport
from rslf.data import ObservationSet, PointCloud
from rslf.errors import ValidationError
from rslf.geometry import LightFieldIntrinsics, MotionState
from rslf.metrics import metrics_csv as table_csv  # noqa: F401  re-exported for the CLI
from rslf.simulate import MotionScenario, Scene, scenario_class

OBS_COLUMNS = ("point_id", "row", "col", "s", "t", "x", "y")
# tolerance for the redundant metric (s, t) columns against the grid indices
_ST_TOL = 1e-12


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(data) -> str:
    """Short SHA-256 of the canonical compact JSON of ``data``."""
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(chash: str) -> dict:
    return {"tool": TOOL_NAME, "version": __version__, "config_hash": chash}


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, data) -> Path:
    return atomic_write(path, canonical_json(data))


def read_json(path, what: str = "file") -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{what} not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return data


def _fmt(value) -> str:
    return repr(float(value))


# observations


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def observations_csv(obs: ObservationSet) -> str:
    obs = obs.sorted()
    s, t = obs.intr.metric(obs.row, obs.col)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OBS_COLUMNS)
    for k in range(len(obs)):
        writer.writerow(
            [int(obs.point_id[k]), int(obs.row[k]), int(obs.col[k]), _fmt(s[k]), _fmt(t[k]), _fmt(obs.x[k]), _fmt(obs.y[k])]
        )
    return buf.getvalue()


def write_observations(path, obs: ObservationSet, chash: str, extra: dict | None = None) -> Path:
    """Write the observation CSV and its JSON sidecar (intrinsics, noise, seed, provenance)."""
    meta = {"intrinsics": obs.intr.to_dict(), "noise_sigma": obs.noise_sigma, "seed": obs.seed}
    meta.update(extra or {})
    meta.update(provenance(chash))
    write_json(sidecar_path(path), meta)
    return atomic_write(path, observations_csv(obs))


def read_observations(path) -> tuple[ObservationSet, dict]:
    """Load an observation CSV and its sidecar.

    Raises:
        ValidationError: missing files, a bad header, or a malformed line
            (the message carries ``path:line``).
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"observation file not found: {path}")
    meta = read_json(sidecar_path(path), "observation sidecar")
    if "intrinsics" not in meta:
        raise ValidationError(f"{sidecar_path(path)}: missing 'intrinsics'")
    intr = LightFieldIntrinsics.from_dict(meta["intrinsics"])
    cols = {name: [] for name in OBS_COLUMNS}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != OBS_COLUMNS:
            raise ValidationError(f"{path}:1: header must be {','.join(OBS_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(OBS_COLUMNS):
                raise ValidationError(f"{path}:{lineno}: expected {len(OBS_COLUMNS)} fields, got {len(rec)}")
            try:
                for name, value in zip(OBS_COLUMNS, rec):
                    cols[name].append(int(value) if name in ("point_id", "row", "col") else float(value))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            if not (0 <= cols["row"][-1] < intr.rows and 0 <= cols["col"][-1] < intr.cols):
                raise ValidationError(f"{path}:{lineno}: viewpoint index outside the {intr.rows}x{intr.cols} grid")
            s, t = intr.metric(cols["row"][-1], cols["col"][-1])
            if abs(s - cols["s"][-1]) > _ST_TOL or abs(t - cols["t"][-1]) > _ST_TOL:
                raise ValidationError(f"{path}:{lineno}: (s, t) disagrees with the rig's viewpoint grid")
    try:
        obs = ObservationSet(
            intr,
            cols["point_id"],
            cols["row"],
            cols["col"],
            cols["x"],
            cols["y"],
            float(meta.get("noise_sigma", 0.0)),
            int(meta.get("seed", 0)),
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return obs, meta


# point clouds


def ply_text(cloud: PointCloud, chash: str) -> str:
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment {TOOL_NAME} {__version__}",
        f"comment config_hash {chash}",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "property int point_id",
        "end_header",
    ]
    for pid, p in zip(cloud.ids, cloud.points):
        lines.append(f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])} {int(pid)}")
    return "\n".join(lines) + "\n"


def write_ply(path, cloud: PointCloud, chash: str) -> Path:
    return atomic_write(path, ply_text(cloud, chash))


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY with double x, y, z and an optional integer ``point_id``."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"PLY file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ValidationError(f"{path}:1: not a PLY file")
    n, props, body = None, [], None
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format" and parts[1:2] != ["ascii"]:
            raise ValidationError(f"{path}:{k}: only ASCII PLY is supported")
        if parts[0] == "element":
            if parts[1] != "vertex":
                raise ValidationError(f"{path}:{k}: unsupported element {parts[1]!r}")
            n = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body = k
            break
    if n is None or body is None or props[:3] != ["x", "y", "z"]:
        raise ValidationError(f"{path}: header needs a vertex element with x, y, z properties")
    rows = lines[body : body + n]
    if len(rows) != n:
        raise ValidationError(f"{path}: expected {n} vertices, found {len(rows)}")
    pts, ids = [], []
    for k, line in enumerate(rows, start=body + 1):
        parts = line.split()
        if len(parts) != len(props):
            raise ValidationError(f"{path}:{k}: expected {len(props)} values")
        rec = dict(zip(props, parts))
        pts.append([float(rec["x"]), float(rec["y"]), float(rec["z"])])
        ids.append(int(rec.get("point_id", len(ids))))
    return PointCloud(np.array(ids, dtype=np.int64), np.array(pts, dtype=float).reshape(-1, 3))


# reports


def report_payload(report: SolveReport, chash: str, extra: dict | None = None) -> dict:
    data = report.to_dict()
    data.update(extra or {})
    data.update(provenance(chash))
    return data


def read_report(path) -> tuple[PointCloud, MotionState, dict]:
    data = read_json(path, "solve report")
    try:
        ids = sorted(int(k) for k in data["points"])
        pts = np.array([data["points"][str(i)] for i in ids], dtype=float)
        motion = MotionState.from_dict(data["motion"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed solve report ({exc})") from exc
    return PointCloud(np.array(ids, dtype=np.int64), pts.reshape(-1, 3)), motion, data


def ground_truth_payload(scene: Scene, sc: MotionScenario, motion: MotionState, intr: LightFieldIntrinsics) -> dict:
    return {
        "scene": scene.to_dict(),
        "scenario": sc.to_dict(),
        "motion": motion.to_dict(),
        "intrinsics": intr.to_dict(),
    }


def read_ground_truth(path) -> tuple[Scene, MotionScenario, MotionState, LightFieldIntrinsics]:
    data = read_json(path, "ground truth")
    try:
        return (
            Scene.from_dict(data["scene"]),
            MotionScenario.from_dict(data["scenario"]),
            MotionState.from_dict(data["motion"]),
            LightFieldIntrinsics.from_dict(data["intrinsics"]),
        )
    except KeyError as exc:
        raise ValidationError(f"{path}: ground truth lacks {exc}") from exc


def load_scene(path) -> Scene:
    scene = Scene.from_dict(read_json(path, "scene file"))
    if scene.name == "scene":
        scene.name = Path(path).stem
    return scene


def load_config(path) -> SolveConfig:
    if path is None:
        return SolveConfig()
    return SolveConfig.from_dict(read_json(path, "solve config"))


# manifests


@dataclass
class ExperimentManifest:
    """A grid of scenes x scenarios x solver modes sharing one rig.

    Relative paths resolve against the manifest's directory. ``config`` is an
    optional SolveConfig file applied to every cell before the mode override.
    """

    scenes: list[Path]
    scenarios: list[int]
    rig: Path
    noise_sigma: float = 0.0
    seed: int = 0
    modes: list[Mode] = field(default_factory=lambda: list(Mode))
    output_dir: Path = Path("out")
    config: Path | None = None
    source: Path | None = None

    @classmethod
    def from_dict(cls, data: dict, base: Path = Path(".")) -> "ExperimentManifest":
        known = {"scenes", "scenarios", "rig", "noise_sigma", "seed", "modes", "output_dir", "config"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"manifest: unknown field(s) {', '.join(unknown)}")
        for key in ("scenes", "scenarios", "rig"):
            if key not in data:
                raise ValidationError(f"manifest: missing field {key!r}")
        try:
            scenarios = [int(i) for i in data["scenarios"]]
            for i in scenarios:
                scenario_class(i)
            modes = [Mode(m) for m in data.get("modes", [m.value for m in Mode])]
            noise = float(data.get("noise_sigma", 0.0))
            seed = int(data.get("seed", 0))
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"manifest: {exc}") from exc
        if noise < 0:
            raise ValidationError("manifest: noise_sigma must be >= 0")
        if not data["scenes"] or not scenarios or not modes:
            raise ValidationError("manifest: scenes, scenarios and modes must be non-empty")
        config = data.get("config")
        return cls(
            scenes=[base / p for p in data["scenes"]],
            scenarios=scenarios,
            rig=base / data["rig"],
            noise_sigma=noise,
            seed=seed,
            modes=modes,
            output_dir=base / data.get("output_dir", "out"),
            config=None if config is None else base / config,
        )

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        manifest = cls.from_dict(read_json(path, "manifest"), path.parent)
        manifest.source = path
        return manifest

    def check_paths(self):
        for p in [*self.scenes, self.rig] + ([self.config] if self.config else []):
            if not Path(p).exists():
                raise ValidationError(f"manifest references a missing file: {p}")

    def to_dict(self) -> dict:
        """Content-level description used for hashing (file contents, not paths)."""
        return {
            "scenes": [read_json(p, "scene file") for p in self.scenes],
            "scenarios": list(self.scenarios),
            "rig": read_json(self.rig, "rig file"),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "modes": [m.value for m in self.modes],
            "config": None if self.config is None else read_json(self.config, "solve config"),
        }


def read_table(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]
