"""Command-line frontend: simulate, reconstruct, evaluate, ablate.

Exit codes: 0 success, 2 validation, 3 not observable, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from rslf import TOOL_NAME, __version__
from rslf import io as rio
from rslf.bundle import Mode, SolveConfig, solve
from rslf.errors import NotObservable, RSLFError, ValidationError
from rslf.metrics import METRIC_NAMES, compute_metrics, to_anchor
from rslf.simulate import (
    CLASS_ORDER,
    check_observability,
    default_rig,
    scenario,
    scenario_to_motion,
    simulate,
    standard_scene,
)
from rslf.triangulate import triangulate_horizontal

log = logging.getLogger(TOOL_NAME)

CELL_COLUMNS = ["scene", "scenario", "class", "mode", "status", *METRIC_NAMES, "n_points", "final_epsilon"]
TABLE_COLUMNS = ["scene", "scenario", "class", "mode", *METRIC_NAMES, "n_points"]


def cell_name(scene: str, scenario_id: int) -> str:
    return f"{scene}_s{scenario_id:02d}"


def cell_seed(seed: int, scene_index: int, scenario_id: int) -> int:
    """Noise seed of one (scene, scenario) cell; fixed by the manifest seed."""
    return seed + 100 * scene_index + scenario_id


def _manifest(args) -> rio.ExperimentManifest:
    manifest = rio.ExperimentManifest.load(args.manifest)
    manifest.check_paths()
    if args.seed is not None:
        manifest.seed = args.seed
    if getattr(args, "mode", None):
        manifest.modes = [Mode(m) for m in args.mode]
    if args.out is not None:
        manifest.output_dir = Path(args.out)
    return manifest


def _manifest_hash(manifest: rio.ExperimentManifest) -> str:
    return rio.config_hash(manifest.to_dict())


def _grid(manifest: rio.ExperimentManifest):
    """Yield (scene index, scene, scenario) in manifest order."""
    for k, path in enumerate(manifest.scenes):
        scene = rio.load_scene(path)
        for sid in manifest.scenarios:
            yield k, scene, scenario(sid)


def _simulate_cell(manifest, intr, k, scene, sc):
    motion = scenario_to_motion(sc, intr.rows, scene.centroid)
    seed = cell_seed(manifest.seed, k, sc.id)
    obs = simulate(scene, sc, intr, manifest.noise_sigma, seed, motion=motion)
    return obs, motion


def cmd_scaffold(args) -> int:
    """Write a rig, the standard scene, a solve config and a manifest over all scenarios."""
    out = Path(args.out or ".")
    rio.write_json(out / "rig.json", default_rig().to_dict())
    rio.write_json(out / "scenes" / "standard.json", standard_scene().to_dict())
    rio.write_json(out / "config.json", SolveConfig().to_dict())
    manifest = {
        "scenes": ["scenes/standard.json"],
        "scenarios": list(range(11)),
        "rig": "rig.json",
        "noise_sigma": 0.0,
        "seed": 0 if args.seed is None else args.seed,
        "modes": [m.value for m in Mode],
        "output_dir": "out",
        "config": "config.json",
    }
    rio.write_json(out / "manifest.json", manifest)
    print(out / "manifest.json")
    return 0


def cmd_simulate(args) -> int:
    manifest = _manifest(args)
    intr = rio.LightFieldIntrinsics.from_dict(rio.read_json(manifest.rig, "rig file"))
    chash = _manifest_hash(manifest)
    out = manifest.output_dir
    count = 0
    for k, scene, sc in _grid(manifest):
        obs, motion = _simulate_cell(manifest, intr, k, scene, sc)
        name = cell_name(scene.name, sc.id)
        extra = {"scene": scene.name, "scenario": sc.to_dict()}
        rio.write_observations(out / "obs" / f"{name}.csv", obs, chash, extra)
        gt = rio.ground_truth_payload(scene, sc, motion, intr)
        gt.update(rio.provenance(chash))
        rio.write_json(out / "gt" / f"{name}.json", gt)
        count += 1
    print(f"wrote {count} observation sets to {out / 'obs'}")
    return 0


def _solve_config(args) -> SolveConfig:
    cfg = rio.load_config(args.config)
    if args.mode:
        cfg = replace(cfg, mode=Mode(args.mode[-1]))
    if args.force:
        cfg = replace(cfg, force=True)
    return cfg


def cmd_reconstruct(args) -> int:
    if args.obs is None:
        raise ValidationError("reconstruct needs --obs")
    obs, meta = rio.read_observations(args.obs)
    cfg = _solve_config(args)
    stem = Path(args.obs).stem
    out = Path(args.out) if args.out else Path(args.obs).parent.parent / "recon"
    chash = rio.config_hash({"obs_sidecar": meta, "config": cfg.to_dict()})

    observability = check_observability(obs)
    if not observability.observable and not cfg.force:
        raise NotObservable("observability: " + "; ".join(observability.reasons))
    try:
        init = triangulate_horizontal(obs)
    except RSLFError as exc:
        raise _prefixed(exc, "init")
    rio.write_json(out / f"{stem}.init.json", {**init.to_dict(), **rio.provenance(chash)})
    try:
        report = solve(obs, init, cfg)
    except RSLFError as exc:
        raise _prefixed(exc, "solve")
    tag = f"{stem}.{cfg.mode.value}"
    extra = {"scene": meta.get("scene"), "scenario": meta.get("scenario"), "observations": str(Path(args.obs).name)}
    rio.write_json(out / f"{tag}.report.json", rio.report_payload(report, chash, extra))
    rio.write_ply(out / f"{tag}.ply", report.points, chash)
    print(f"{tag}: final epsilon {report.final_epsilon:.6e}, {len(report.points)} points")
    return 0


def _prefixed(exc: RSLFError, stage: str) -> RSLFError:
    """Same error with the pipeline stage prepended to its message."""
    exc.args = (f"{stage}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
    return exc


def _class_summary(rows: list[dict]) -> list[dict]:
    """Mean metrics per (mode, class), classes in GS/slow/fast order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["mode"], r["class"]), []).append(r)
    modes = [m.value for m in Mode if any(k[0] == m.value for k in groups)]
    out = []
    for mode in modes:
        for cls in CLASS_ORDER:
            cells = groups.get((mode, cls))
            if not cells:
                continue
            row = {"mode": mode, "class": cls, "cells": len(cells)}
            for name in METRIC_NAMES:
                row[name] = float(np.mean([float(c[name]) for c in cells]))
            out.append(row)
    return out


def _sort_key(row: dict):
    return (row["scene"], int(row["scenario"]), [m.value for m in Mode].index(row["mode"]))


def cmd_evaluate(args) -> int:
    if args.report is None or args.gt is None:
        raise ValidationError("evaluate needs --report and --gt")
    est, motion, data = rio.read_report(args.report)
    scene, sc, true_motion, intr = rio.read_ground_truth(args.gt)
    metrics = compute_metrics(
        to_anchor(est, motion, intr, args.anchor),
        to_anchor(scene.cloud(), true_motion, intr, args.anchor),
        frame=args.anchor,
        quantity=args.quantity,
    )
    mode = data.get("mode", "Full")
    chash = rio.config_hash(
        {
            "report": data.get("config_hash"),
            "gt": rio.read_json(args.gt).get("config_hash"),
            "anchor": args.anchor,
            "quantity": args.quantity,
        }
    )
    out = Path(args.out) if args.out else Path(args.report).parent
    stem = Path(args.report).name.removesuffix(".report.json")
    payload = {**metrics.to_dict(), "scene": scene.name, "scenario": sc.id, "mode": mode, **rio.provenance(chash)}
    rio.write_json(out / f"{stem}.metrics.json", payload)

    key = {"scene": scene.name, "scenario": sc.id, "class": sc.kind, "mode": mode}
    table_path = out / "metrics_table.csv"
    rows = [r for r in rio.read_table(table_path) if (r["scene"], int(r["scenario"]), r["mode"]) != (scene.name, sc.id, mode)]
    rows.append(metrics.csv_row(**key))
    rows.sort(key=_sort_key)
    rio.atomic_write(table_path, rio.table_csv(rows, TABLE_COLUMNS))
    summary = _class_summary(rows)
    rio.atomic_write(out / "metrics_by_class.csv", rio.table_csv(summary, ["mode", "class", "cells", *METRIC_NAMES]))
    print(rio.table_csv([metrics.csv_row(**key)], TABLE_COLUMNS), end="")
    return 0


def ablation_table(cells: list[dict], modes: list[Mode]) -> tuple[list[dict], dict]:
    """One row per mode with RMS and delta1 averaged per class, plus ordering flags."""
    ok = [c for c in cells if c["status"] == "ok"]
    table = []
    for mode in modes:
        row = {"mode": mode.value}
        for cls in CLASS_ORDER:
            vals = [c for c in ok if c["mode"] == mode.value and c["class"] == cls]
            row[f"{cls}_rms"] = float(np.mean([c["rms"] for c in vals])) if vals else ""
            row[f"{cls}_delta1"] = float(np.mean([c["delta1"] for c in vals])) if vals else ""
            row[f"{cls}_cells"] = len(vals)
        table.append(row)

    def rms(mode, scene, sid):
        for c in ok:
            if (c["mode"], c["scene"], c["scenario"]) == (mode, scene, sid):
                return c["rms"]
        return None

    def compare(lo: str, hi: str, moving: bool) -> dict:
        keys = sorted({(c["scene"], c["scenario"]) for c in cells if (c["class"] != "GS") == moving})
        wins = total = 0
        for scene, sid in keys:
            a, b = rms(lo, scene, sid), rms(hi, scene, sid)
            if a is None or b is None:
                continue
            total += 1
            wins += a <= b
        return {"holds": wins, "cells": total}

    names = {m.value for m in modes}
    flags = {}
    if {"Full", "NoInit"} <= names:
        flags["full_le_noinit"] = compare("Full", "NoInit", True)
    if {"Full", "NoReg"} <= names:
        flags["full_le_noreg"] = compare("Full", "NoReg", True)
    if {"Full", "NoRS"} <= names:
        flags["nors_le_full_gs"] = compare("NoRS", "Full", False)
    return table, flags


def _render(table: list[dict], flags: dict, columns: list[str]) -> str:
    lines = ["  ".join(f"{c:>13}" for c in columns)]
    for row in table:
        cells = [f"{row[c]:13.6g}" if isinstance(row[c], float) else f"{row[c]!s:>13}" for c in columns]
        lines.append("  ".join(cells))
    labels = {
        "full_le_noinit": "Full <= NoInit (moving scenarios)",
        "full_le_noreg": "Full <= NoReg (moving scenarios)",
        "nors_le_full_gs": "NoRS <= Full (GS scenario)",
    }
    for key, flag in flags.items():
        lines.append(f"# {labels[key]}: {flag['holds']}/{flag['cells']}")
    return "\n".join(lines) + "\n"


def cmd_ablate(args) -> int:
    manifest = _manifest(args)
    intr = rio.LightFieldIntrinsics.from_dict(rio.read_json(manifest.rig, "rig file"))
    base_cfg = rio.load_config(manifest.config)
    if args.force:
        base_cfg = replace(base_cfg, force=True)
    chash = _manifest_hash(manifest)
    out = manifest.output_dir
    cells = []
    for k, scene, sc in _grid(manifest):
        name = cell_name(scene.name, sc.id)
        obs, motion = _simulate_cell(manifest, intr, k, scene, sc)
        gt = to_anchor(scene.cloud(), motion, intr)
        init = None
        for mode in manifest.modes:
            cell = {"scene": scene.name, "scenario": sc.id, "class": sc.kind, "mode": mode.value}
            try:
                init = init or triangulate_horizontal(obs)
                report = solve(obs, init, replace(base_cfg, mode=mode))
                metrics = compute_metrics(to_anchor(report.points, report.motion, intr), gt)
            except RSLFError as exc:
                log.warning("%s %s failed: %s", name, mode.value, exc)
                cell["status"] = f"{type(exc).__name__}: {exc}"
                cells.append(cell)
                continue
            cell.update(metrics.csv_row(), status="ok", final_epsilon=report.final_epsilon)
            cells.append(cell)
            tag = f"{name}.{mode.value}"
            extra = {"scene": scene.name, "scenario": sc.to_dict()}
            rio.write_json(out / "cells" / f"{tag}.report.json", rio.report_payload(report, chash, extra))
            rio.write_ply(out / "cells" / f"{tag}.ply", report.points, chash)
            rio.write_json(out / "cells" / f"{tag}.metrics.json", {**metrics.to_dict(), **rio.provenance(chash)})
            log.info("%s %s rms=%.3e", name, mode.value, metrics.rms)

    table, flags = ablation_table(cells, manifest.modes)
    columns = ["mode"] + [f"{cls}_{m}" for cls in CLASS_ORDER for m in ("rms", "delta1")]
    rio.atomic_write(out / "cells.csv", rio.table_csv(cells, CELL_COLUMNS))
    rio.atomic_write(out / "ablation.csv", rio.table_csv(table, columns))
    rendered = _render(table, flags, columns)
    rio.atomic_write(out / "ablation.txt", rendered)
    rio.write_json(out / "ablation.json", {"table": table, "flags": flags, "cells": cells, **rio.provenance(chash)})
    print(rendered, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Rolling-shutter light-field structure from motion.")
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest", type=Path)
        p.add_argument("--obs", type=Path)
        p.add_argument("--config", type=Path)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="solve even if the observability check fails")
        p.add_argument("--mode", action="append", choices=[m.value for m in Mode], help="solver mode (repeatable for ablate)")
        return p

    common(sub.add_parser("scaffold", help="write an example rig, scene, config and manifest")).set_defaults(func=cmd_scaffold)
    common(sub.add_parser("simulate", help="render observation sets for a manifest")).set_defaults(func=cmd_simulate)
    common(sub.add_parser("reconstruct", help="initialise and solve one observation set")).set_defaults(func=cmd_reconstruct)
    ev = common(sub.add_parser("evaluate", help="score a solve report against ground truth"))
    ev.add_argument("--report", type=Path)
    ev.add_argument("--gt", type=Path)
    ev.add_argument("--anchor", choices=["center", "first"], default="center")
    ev.add_argument("--quantity", choices=["depth", "euclidean"], default="depth")
    ev.set_defaults(func=cmd_evaluate)
    common(sub.add_parser("ablate", help="run every solver mode over a manifest grid")).set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("simulate", "ablate") and args.manifest is None:
        print(f"error: {args.command} needs --manifest", file=sys.stderr)
        return ValidationError.exit_code
    try:
        return args.func(args)
    except RSLFError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
