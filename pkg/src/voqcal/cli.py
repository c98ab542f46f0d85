"""voqcal command line: assess, calibrate, evaluate, simulate, project.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, io
from .config import ConfigError, load_config
from .evaluation import EvaluationError, evaluate_scene, render_projection
from .pipeline import CalibrationError, calibrate, enumerate_and_score
from .poses import extract_poses
from .solver import DegenerateSetError
from .synthetic import SceneError, export_scene, generate_scene, scene_config, scene_spec_from_dict

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("voqcal")


def _load_cfg(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=getattr(args, "seed", None), k_sets=getattr(args, "k", None),
                              refine=True if getattr(args, "refine", False) else None)


def _data_dir(args, cfg) -> Path:
    d = args.data or cfg.paths.get("data")
    if not d:
        raise ConfigError("no data directory given (--data or paths.data)")
    return Path(d)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.paths.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _calibration_samples(args, cfg):
    entries = [e for e in io.read_index(_data_dir(args, cfg)) if e.role == "calibration"]
    outcomes = extract_poses(entries, cfg, args.workers)
    samples = [o.sample for o in outcomes if o.sample is not None]
    failed = [(o.pose_id, o.reason) for o in outcomes if o.sample is None]
    if len(samples) < 3:
        raise io.DataError(f"only {len(samples)} usable calibration poses; need at least 3")
    return samples, failed


def cmd_assess(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    samples, failed = _calibration_samples(args, cfg)
    log.info("scoring %d poses", len(samples))
    scores = enumerate_and_score(samples, cfg.board_error_weight, args.workers)
    ids = [s.pose_id for s in samples]
    io.write_assessment_csv(out / "assessment.csv", scores, ids, cfg.hash())
    finite = sorted((s for s in scores if s.finite), key=lambda s: s.sort_key())
    lines = [f"poses used: {len(samples)}   sets scored: {len(scores)}"]
    if finite:
        b = finite[0]
        lines.append(f"best VOQ: {b.voq:.3f} (kappa_LC {b.kappa_LC:.3f}, e_be {b.e_be:.2f} mm) "
                     f"poses {', '.join(ids[i] for i in b.indices)}")
    lines.append(f"sets with kappa_LC >= {cfg.kappa_warn:g}: {sum(s.kappa_LC >= cfg.kappa_warn for s in scores)}")
    lines.append("pose e_dim (mm):")
    lines += [f"  {s.pose_id}: {s.e_dim:.2f}" for s in samples]
    for pid, reason in failed:
        lines.append(f"  {pid}: excluded ({reason})")
    print("\n".join(lines))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    t0 = time.perf_counter()
    samples, failed = _calibration_samples(args, cfg)
    report = calibrate(samples, k=cfg.k_sets, board_weight=cfg.board_error_weight,
                       kappa_prefilter=cfg.kappa_prefilter, kappa_warn=cfg.kappa_warn,
                       z_threshold=cfg.z_threshold, refine=cfg.refine, workers=args.workers)
    report.config_echo = cfg.to_dict()
    report.warnings += [f"pose {pid} excluded: {why}" for pid, why in failed]
    io.write_report_json(out / "calibration.json", report, [s.pose_id for s in samples], cfg.hash())
    log.info("calibration finished in %.1f s", time.perf_counter() - t0)
    r, p, y = report.euler_deg
    x, yy, z = report.final.translation
    print(f"rpy (deg): {r:.4f} {p:.4f} {y:.4f}   t (m): {x:.4f} {yy:.4f} {z:.4f}")
    print(f"stddev: {' '.join(f'{v:.4g}' for v in report.stddev)}   mean VOQ: {report.mean_voq:.3f}")
    print(f"sets used: {len(report.sets_used)}   rejected: {len(report.sets_rejected)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    transform = io.read_transform_json(args.calibration)
    entries = [e for e in io.read_index(_data_dir(args, cfg)) if e.role == "evaluation"]
    if not entries:
        raise io.DataError("index lists no evaluation poses")
    outcomes = extract_poses(entries, cfg, args.workers)
    stats = evaluate_scene(transform, cfg.intrinsics, outcomes)
    io.write_stats_csv(out / "stats.csv", stats, cfg.hash())
    summary = io.stats_summary(stats, cfg.hash())
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"reprojection error: {stats.mean_px:.3f} +/- {stats.std_px:.3f} px, "
          f"{stats.mean_cm:.3f} +/- {stats.std_cm:.3f} cm over {len(stats.per_pose)} poses "
          f"({len(stats.excluded)} excluded)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        with open(args.spec) as fh:
            data = yaml.safe_load(fh) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scene spec: {exc}") from exc
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = scene_spec_from_dict(data)
    except (SceneError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    scene = generate_scene(spec)
    out = Path(args.out or ".")
    export_scene(scene, out, scene_config(spec))
    print(f"wrote {len(scene.poses)} calibration and {len(scene.eval_poses)} evaluation poses to {out}")
    return EXIT_OK


def cmd_project(args) -> int:
    cfg = _load_cfg(args)
    transform = io.read_transform_json(args.calibration)
    if args.cloud:
        cloud_path = Path(args.cloud)
    elif args.pose:
        cloud_path = _data_dir(args, cfg) / args.pose / "cloud.csv"
    else:
        raise ConfigError("project needs --cloud or --pose")
    cloud = io.read_cloud_csv(cloud_path)
    background = io.read_ppm(args.background) if args.background else None
    img = render_projection(transform, cfg.intrinsics, cloud.points, cfg.image_size,
                            cfg.depth_colour_range, background)
    out = Path(args.output) if args.output else _out_dir(args, cfg) / "projection.ppm"
    io.write_ppm(out, img, f"voqcal {__version__} config={cfg.hash()}")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voqcal", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"voqcal {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", required=True, help="YAML configuration file")
        if data:
            p.add_argument("--data", help="pose directory containing index.csv")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1, help="worker processes")

    p = sub.add_parser("assess", help="score every 3-pose set")
    common(p)
    p.set_defaults(func=cmd_assess)

    p = sub.add_parser("calibrate", help="estimate the camera-to-lidar transform")
    common(p)
    p.add_argument("--k", type=int, help="number of lowest-VOQ sets to solve")
    p.add_argument("--refine", action="store_true", help="Gauss-Newton refinement of every set")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="reprojection error over evaluation poses")
    common(p)
    p.add_argument("--calibration", required=True, help="calibration JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="generate a synthetic pose directory")
    p.add_argument("--spec", required=True, help="YAML scene spec")
    p.add_argument("--out", help="output pose directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("project", help="render a pointcloud into the image as PPM")
    common(p)
    p.add_argument("--calibration", required=True, help="calibration JSON")
    p.add_argument("--cloud", help="pointcloud CSV")
    p.add_argument("--pose", help="pose id inside --data")
    p.add_argument("--background", help="P6 PPM camera image to draw over")
    p.add_argument("--output", help="output PPM path (default OUT/projection.ppm)")
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (io.DataError, OSError, EvaluationError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (CalibrationError, DegenerateSetError, SceneError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
