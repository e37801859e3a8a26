"""File output for runs, plus the cloud CSV reader.

Floats go to CSV with 17 significant digits, which round-trips every double.
JSON uses Python's shortest round-trip ``repr`` for floats.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np

from .meanfield import WeightedPointCloud


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(x) for x in row) + "\n")


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def config_hash(cfg_dict) -> str:
    canon = json.dumps(to_jsonable(cfg_dict), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {"coupled_meanfield": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(out_dir, command, cfg_dict, artifacts, wall_time, extra=None) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for name in artifacts:
        p = out_dir / name
        entries.append({"name": name, "sha256": sha256_file(p), "bytes": p.stat().st_size})
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg_dict) if cfg_dict is not None else None,
        "seed": cfg_dict.get("seed") if cfg_dict else None,
        "versions": versions(),
        "wall_time_s": wall_time,
        "artifacts": entries,
    }
    manifest.update(extra or {})
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path


# --- tables -------------------------------------------------------------------------------

def _vec_names(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


def trajectory_table(record, particles=False, dae_series=None):
    """Rows ``t, y.., v.., E, constraint_drift[, x<i>_<d>..][, DAE residuals]``."""
    ny = record.y.shape[1]
    header = ["t"] + _vec_names("y", ny) + _vec_names("v", ny) + ["E", "constraint_drift"]
    n, nx = record.particles.shape[1:]
    if particles:
        header += [f"x{i}_{d}" for i in range(n) for d in range(nx)]
    if dae_series is not None:
        header += ["newton_x_residual", "newton_y_residual", "constraint_residual"]
    rows = []
    for k in range(len(record)):
        row = [record.times[k], *record.y[k], *record.v[k], record.energy[k],
               record.constraint_drift[k]]
        if particles:
            row += record.particles[k].ravel().tolist()
        if dae_series is not None:
            r = dae_series.reports[k]
            row += [r.newton_x_residual, r.newton_y_residual, r.constraint_residual]
        rows.append(row)
    return header, rows


def flow_table(traj):
    ny = traj.y.shape[1]
    header = ["t"] + _vec_names("y", ny) + _vec_names("v", ny) + ["E"]
    rows = [[traj.times[k], *traj.y[k], *traj.v[k], traj.energy[k]] for k in range(len(traj))]
    return header, rows


def nodes_table(traj):
    """One row per node per recorded time, for W1 post-processing."""
    nx = traj.nodes.shape[2]
    header = ["t", "node", "weight"] + _vec_names("x", nx)
    rows = []
    w = traj.weights
    for k in range(len(traj)):
        t = traj.times[k]
        for i, x in enumerate(traj.nodes[k]):
            rows.append([t, i, w[i], *x])
    return header, rows


def read_cloud(path) -> WeightedPointCloud:
    """Cloud CSV: header ``x0,x1,..`` (the dimension) plus an optional ``weight`` column."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        coords = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
        if not coords:
            raise ValueError(f"{path}: header must name coordinate columns x0, x1, ...")
        wcol = header.index("weight") if "weight" in header else None
        pts, wts = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                pts.append([float(row[i]) for i in coords])
                if wcol is not None:
                    wts.append(float(row[wcol]))
            except (ValueError, IndexError):
                raise ValueError(f"{path}: bad row at line {lineno}") from None
    if not pts:
        raise ValueError(f"{path}: no points")
    pts = np.array(pts)
    if wcol is None:
        return WeightedPointCloud.empirical(pts)
    return WeightedPointCloud(pts, np.array(wts))


def write_cloud(path, cloud: WeightedPointCloud, weights=True) -> None:
    header = _vec_names("x", cloud.dim) + (["weight"] if weights else [])
    rows = [[*p, w] if weights else list(p) for p, w in zip(cloud.points, cloud.weights)]
    write_csv(path, header, rows)
