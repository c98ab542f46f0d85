"""File formats: pointcloud/corner CSVs, pose directories, reports, PPM images."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .camera import CornerObservations
from .evaluation import ReprojectionStats
from .geometry import RigidTransform, Rotation
from .lidar import PointCloud
from .pipeline import CalibrationReport

CONVENTION = "p_lidar = R * p_camera + t"
ASSESSMENT_HEADER = ["set_id", "pose_i", "pose_j", "pose_k", "kappa_L", "kappa_C", "kappa_LC", "e_be_mm", "voq"]
STATS_HEADER = ["pose_id", "pixel_error_px", "metric_error_cm", "excluded", "reason"]


class DataError(ValueError):
    pass


def provenance_line(config_hash: str) -> str:
    return f"# voqcal {__version__} config={config_hash}"


def _data_rows(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    return list(csv.reader(lines))


def _to_float(cell: str, path) -> float:
    try:
        v = float(cell)
    except ValueError as exc:
        raise DataError(f"{path}: not a number: {cell!r}") from exc
    if not math.isfinite(v):
        raise DataError(f"{path}: non-finite value {cell!r}")
    return v


def read_cloud_csv(path) -> PointCloud:
    rows = _data_rows(path)
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["x", "y", "z"] or not set(header[3:]) <= {"intensity", "ring"}:
        raise DataError(f"{path}: header must be x,y,z[,intensity][,ring]")
    data = np.array([[_to_float(c, path) for c in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    col = {name: i for i, name in enumerate(header)}
    ring = data[:, col["ring"]].astype(int) if "ring" in col else None
    intensity = data[:, col["intensity"]] if "intensity" in col else None
    return PointCloud(data[:, :3], ring, intensity)


def write_cloud_csv(path, cloud: PointCloud, config_hash: str = "") -> None:
    header = ["x", "y", "z"]
    cols = [cloud.points]
    if cloud.intensity is not None:
        header.append("intensity")
        cols.append(cloud.intensity[:, None])
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(provenance_line(config_hash) + "\n")
        w = csv.writer(fh)
        w.writerow(header + (["ring"] if cloud.ring is not None else []))
        body = np.hstack(cols)
        for i, row in enumerate(body):
            cells = [repr(float(x)) for x in row]
            if cloud.ring is not None:
                cells.append(str(int(cloud.ring[i])))
            w.writerow(cells)


def read_corners_csv(path, grid) -> CornerObservations:
    rows = _data_rows(path)
    if not rows or [h.strip() for h in rows[0]] != ["u", "v"]:
        raise DataError(f"{path}: header must be u,v")
    px = [[_to_float(c, path) for c in r] for r in rows[1:]]
    try:
        return CornerObservations(np.array(px, dtype=float).reshape(-1, 2), grid)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_corners_csv(path, obs: CornerObservations, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(provenance_line(config_hash) + "\n")
        w = csv.writer(fh)
        w.writerow(["u", "v"])
        for u, v in obs.pixels:
            w.writerow([repr(float(u)), repr(float(v))])


@dataclass(frozen=True)
class PoseEntry:
    pose_id: str
    role: str  # "calibration" or "evaluation"
    cloud_path: Path
    corners_path: Path


def read_index(data_dir) -> list:
    """Pose listing from ``index.csv`` (``pose_id,role``)."""
    data_dir = Path(data_dir)
    path = data_dir / "index.csv"
    if not path.exists():
        raise DataError(f"{path} not found")
    rows = _data_rows(path)
    if not rows or [h.strip() for h in rows[0]] != ["pose_id", "role"]:
        raise DataError(f"{path}: header must be pose_id,role")
    entries, seen = [], set()
    for r in rows[1:]:
        pid, role = r[0].strip(), r[1].strip()
        if pid in seen:
            raise DataError(f"{path}: duplicate pose id {pid}")
        if role not in ("calibration", "evaluation"):
            raise DataError(f"{path}: unknown role {role!r}")
        seen.add(pid)
        entries.append(PoseEntry(pid, role, data_dir / pid / "cloud.csv", data_dir / pid / "corners.csv"))
    return entries


def write_index(data_dir, entries) -> None:
    with open(Path(data_dir) / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pose_id", "role"])
        for pid, role in entries:
            w.writerow([pid, role])


def _sig(x, digits: int = 9):
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_sig(v, digits) for v in x]
    if isinstance(x, dict):
        return {k: _sig(v, digits) for k, v in x.items()}
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.{digits}g}")
    if isinstance(x, np.integer):
        return int(x)
    return x


def _set_entry(result, status: str, reason: Optional[str] = None) -> dict:
    s = result.score
    entry = {
        "indices": list(result.indices),
        "status": status,
        "kappa_L": s.kappa_L, "kappa_C": s.kappa_C, "kappa_LC": s.kappa_LC,
        "e_be_mm": s.e_be, "voq": s.voq,
    }
    if result.solution is not None:
        tr = result.solution.transform
        entry.update({
            "euler_deg": np.rad2deg(tr.rotation.as_rpy()),
            "translation_m": tr.translation,
            "residual_normal_angle_rad": result.solution.residual_normal_angle,
            "residual_centre_m": result.solution.residual_centre,
        })
    if reason:
        entry["reason"] = reason
    return entry


def report_to_dict(report: CalibrationReport, pose_ids=None, config_hash: str = "") -> dict:
    final = report.final
    inv = final.inverse()
    d = {
        "tool_version": __version__,
        "config_hash": config_hash,
        "convention": CONVENTION,
        "euler_convention": "intrinsic Z-Y-X (yaw, pitch, roll); euler_deg lists roll, pitch, yaw",
        "rotation_matrix": final.rotation.matrix.ravel(),
        "quaternion": final.rotation.as_quaternion(),
        "euler_deg": report.euler_deg,
        "translation_m": final.translation,
        "stddev": report.stddev,
        "stddev_units": "roll, pitch, yaw in deg; x, y, z in m",
        "mean_voq": report.mean_voq,
        "inverse": {
            "convention": "p_camera = R * p_lidar + t",
            "rotation_matrix": inv.rotation.matrix.ravel(),
            "translation_m": inv.translation,
        },
        "warnings": list(report.warnings),
        "sets": [_set_entry(r, "used") for r in report.sets_used]
                + [_set_entry(r, "rejected", why) for r, why in report.sets_rejected],
        "config": report.config_echo,
    }
    if pose_ids is not None:
        for s in d["sets"]:
            s["pose_ids"] = [pose_ids[i] for i in s["indices"]]
    return _sig(d)


def write_report_json(path, report: CalibrationReport, pose_ids=None, config_hash: str = "") -> None:
    text = json.dumps(report_to_dict(report, pose_ids, config_hash), indent=2)
    Path(path).write_text(text + "\n")


def read_transform_json(path) -> RigidTransform:
    try:
        d = json.loads(Path(path).read_text())
        r = np.array(d["rotation_matrix"], dtype=float).reshape(3, 3)
        t = np.array(d["translation_m"], dtype=float)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read calibration from {path}: {exc}") from exc
    if d.get("convention", CONVENTION) != CONVENTION:
        raise DataError(f"{path}: unexpected transform convention {d.get('convention')!r}")
    return RigidTransform(Rotation(r), t)


def write_assessment_csv(path, scores, pose_ids=None, config_hash: str = "") -> None:
    """Scores sorted ascending by VOQ (infinite last)."""
    ordered = sorted(scores, key=lambda s: s.sort_key())
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(provenance_line(config_hash) + "\n")
        w = csv.writer(fh)
        w.writerow(ASSESSMENT_HEADER)
        for set_id, s in enumerate(ordered):
            idx = [pose_ids[i] for i in s.indices] if pose_ids is not None else list(s.indices)
            w.writerow([set_id, *idx, *(f"{v:.9g}" for v in (s.kappa_L, s.kappa_C, s.kappa_LC, s.e_be, s.voq))])


def write_stats_csv(path, stats: ReprojectionStats, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(provenance_line(config_hash) + "\n")
        w = csv.writer(fh)
        w.writerow(STATS_HEADER)
        for e in stats.per_pose:
            w.writerow([e.pose_id, f"{e.pixel_error:.9g}", f"{e.metric_error:.9g}", 0, ""])
        for pid, reason in stats.excluded:
            w.writerow([pid, "", "", 1, reason])


def stats_summary(stats: ReprojectionStats, config_hash: str = "") -> dict:
    return _sig({
        "tool_version": __version__,
        "config_hash": config_hash,
        "poses_used": len(stats.per_pose),
        "poses_excluded": len(stats.excluded),
        "mean_px": stats.mean_px, "std_px": stats.std_px,
        "mean_cm": stats.mean_cm, "std_cm": stats.std_cm,
        "mean_corner_px": stats.mean_corner_px,
        "metric_conversion": "cm = px * camera depth of board centre / mean(fx, fy) * 100",
    })


def write_ppm(path, image: np.ndarray, comment: str = "") -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    head = b"P6\n"
    if comment:
        head += b"# " + comment.encode() + b"\n"
    head += f"{w} {h}\n255\n".encode()
    Path(path).write_bytes(head + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise DataError(f"{path}: only 8-bit binary PPM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = data[pos + 1:pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise DataError(f"{path}: truncated image data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
