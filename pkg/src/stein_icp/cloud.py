"""Point cloud container, ASCII file I/O, normals, and voxel downsampling.

Supported formats:

* PLY, ASCII 1.0. Vertex properties x, y, z are required; nx, ny, nz are
  picked up when present. Extra vertex properties are parsed positionally
  and ignored. Faces and other elements after the vertices are skipped.
* PCD, DATA ascii. FIELDS must contain x y z, optionally
  normal_x normal_y normal_z.
* xyz-csv: one point per line, comma or whitespace separated, 3 columns
  (points) or 6 (points then normals). Blank lines and '#' comments are
  allowed.

All loaders reject non-finite coordinates and empty files.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CloudParseError, InputError
from .geometry import Pose6D, rotation_from_euler

__all__ = [
    "PointCloud",
    "load_cloud",
    "write_cloud",
    "transform_cloud",
    "estimate_normals",
    "voxel_downsample",
    "FORMATS",
]

FORMATS = ("ply", "pcd", "xyz-csv")

_SUFFIXES = {".ply": "ply", ".pcd": "pcd", ".csv": "xyz-csv", ".xyz": "xyz-csv", ".txt": "xyz-csv"}


@dataclass(frozen=True)
class PointCloud:
    """Immutable cloud: points (N, 3) float64, optional unit normals (N, 3).

    A zero normal is the documented marker for "no reliable normal here";
    such points are skipped by the point-to-plane metric.
    """

    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise InputError("point cloud is empty")
        if not np.isfinite(pts).all():
            raise InputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float)
            if nrm.shape != pts.shape:
                raise InputError(f"normals shape {nrm.shape} does not match points {pts.shape}")
            if not np.isfinite(nrm).all():
                raise InputError("normals contain non-finite values")
            lengths = np.linalg.norm(nrm, axis=1)
            bad = (np.abs(lengths - 1.0) > 1e-6) & (lengths > 1e-12)
            if bad.any():
                raise InputError("normals must be unit length or exactly zero")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return self.points.shape[0]


def transform_cloud(cloud: PointCloud, pose) -> PointCloud:
    """Rigidly transform a cloud; normals rotate, translations do not move them."""
    p = pose.to_array() if isinstance(pose, Pose6D) else np.asarray(pose, dtype=float).reshape(6)
    R = rotation_from_euler(p[3], p[4], p[5])
    pts = cloud.points @ R.T + p[:3]
    nrm = cloud.normals @ R.T if cloud.normals is not None else None
    return PointCloud(pts, nrm)


# --------------------------------------------------------------------------
# Parsing


def _detect_format(path: Path, format: str | None) -> str:
    if format is not None:
        if format not in FORMATS:
            raise InputError(f"unknown format {format!r}, expected one of {FORMATS}")
        return format
    fmt = _SUFFIXES.get(path.suffix.lower())
    if fmt is None:
        raise InputError(f"cannot infer cloud format from suffix {path.suffix!r}; pass format=")
    return fmt


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read a cloud from disk. Format is inferred from the suffix unless given."""
    path = Path(path)
    fmt = _detect_format(path, format)
    try:
        text = path.read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    if fmt == "ply":
        pts, nrm = _parse_ply(text, path)
    elif fmt == "pcd":
        pts, nrm = _parse_pcd(text, path)
    else:
        pts, nrm = _parse_xyz(text, path)
    try:
        return PointCloud(pts, nrm)
    except InputError as e:
        raise CloudParseError(f"{path}: {e}") from e


def _floats(tokens, path, lineno, n):
    if len(tokens) < n:
        raise CloudParseError(f"{path}:{lineno}: expected {n} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens[:n]]
    except ValueError as e:
        raise CloudParseError(f"{path}:{lineno}: {e}") from e


def _parse_ply(text: str, path):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise CloudParseError(f"{path}:1: not a PLY file (missing 'ply' magic)")
    n_vertex = None
    props: list[str] = []
    in_vertex_element = False
    body_start = None
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if line == "end_header":
            body_start = i
            break
        if not line or line.startswith("comment"):
            continue
        fields = line.split()
        if fields[0] == "format":
            if fields[1:3] != ["ascii", "1.0"]:
                raise CloudParseError(f"{path}:{i}: only 'format ascii 1.0' is supported")
        elif fields[0] == "element":
            in_vertex_element = fields[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertex = int(fields[2])
                except (IndexError, ValueError) as e:
                    raise CloudParseError(f"{path}:{i}: bad element vertex count") from e
        elif fields[0] == "property" and in_vertex_element:
            props.append(fields[-1])
    if body_start is None:
        raise CloudParseError(f"{path}: missing end_header")
    if n_vertex is None:
        raise CloudParseError(f"{path}: header defines no vertex element")
    for axis in ("x", "y", "z"):
        if axis not in props:
            raise CloudParseError(f"{path}: vertex element lacks property {axis!r}")
    col = {name: k for k, name in enumerate(props)}
    has_normals = all(n in col for n in ("nx", "ny", "nz"))

    body = lines[body_start:]
    if len(body) < n_vertex:
        raise CloudParseError(f"{path}: header promises {n_vertex} vertices, body has {len(body)}")
    pts = np.empty((n_vertex, 3))
    nrm = np.empty((n_vertex, 3)) if has_normals else None
    for k in range(n_vertex):
        lineno = body_start + 1 + k
        tokens = body[k].split()
        vals = _floats(tokens, path, lineno, len(props))
        pts[k] = vals[col["x"]], vals[col["y"]], vals[col["z"]]
        if has_normals:
            nrm[k] = vals[col["nx"]], vals[col["ny"]], vals[col["nz"]]
    return pts, nrm


def _parse_pcd(text: str, path):
    lines = text.splitlines()
    fields = None
    n_points = None
    data_start = None
    for i, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        key = tokens[0].upper()
        if key == "FIELDS":
            fields = tokens[1:]
        elif key == "POINTS":
            try:
                n_points = int(tokens[1])
            except (IndexError, ValueError) as e:
                raise CloudParseError(f"{path}:{i}: bad POINTS count") from e
        elif key == "DATA":
            if tokens[1:2] != ["ascii"]:
                raise CloudParseError(f"{path}:{i}: only 'DATA ascii' is supported")
            data_start = i
            break
    if data_start is None:
        raise CloudParseError(f"{path}: missing DATA line")
    if fields is None:
        raise CloudParseError(f"{path}: missing FIELDS line")
    for axis in ("x", "y", "z"):
        if axis not in fields:
            raise CloudParseError(f"{path}: FIELDS lacks {axis!r}")
    col = {name: k for k, name in enumerate(fields)}
    has_normals = all(n in col for n in ("normal_x", "normal_y", "normal_z"))

    rows = [r for r in lines[data_start:] if r.strip()]
    if n_points is None:
        n_points = len(rows)
    if len(rows) < n_points:
        raise CloudParseError(f"{path}: header promises {n_points} points, body has {len(rows)}")
    pts = np.empty((n_points, 3))
    nrm = np.empty((n_points, 3)) if has_normals else None
    for k in range(n_points):
        lineno = data_start + 1 + k
        vals = _floats(rows[k].split(), path, lineno, len(fields))
        pts[k] = vals[col["x"]], vals[col["y"]], vals[col["z"]]
        if has_normals:
            nrm[k] = vals[col["normal_x"]], vals[col["normal_y"]], vals[col["normal_z"]]
    return pts, nrm


def _parse_xyz(text: str, path):
    pts_rows = []
    nrm_rows = []
    width = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.replace(",", " ").split()
        if width is None:
            if len(tokens) not in (3, 6):
                raise CloudParseError(f"{path}:{i}: expected 3 or 6 columns, got {len(tokens)}")
            width = len(tokens)
        vals = _floats(tokens, path, i, width)
        pts_rows.append(vals[:3])
        if width == 6:
            nrm_rows.append(vals[3:])
    if not pts_rows:
        raise CloudParseError(f"{path}: no data rows")
    pts = np.array(pts_rows)
    nrm = np.array(nrm_rows) if nrm_rows else None
    return pts, nrm


# --------------------------------------------------------------------------
# Writing


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips the float64 exactly.
    return repr(float(x))


def write_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    """Write a cloud. ASCII floats use round-trip formatting, so a
    write/load cycle reproduces the arrays bit for bit."""
    path = Path(path)
    fmt = _detect_format(path, format)
    has_normals = cloud.normals is not None
    rows = []
    for k in range(len(cloud)):
        vals = list(cloud.points[k]) + (list(cloud.normals[k]) if has_normals else [])
        rows.append(" ".join(_fmt(v) for v in vals))
    if fmt == "ply":
        header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
        header += [f"property float {a}" for a in ("x", "y", "z")]
        if has_normals:
            header += [f"property float {a}" for a in ("nx", "ny", "nz")]
        header.append("end_header")
        path.write_text("\n".join(header + rows) + "\n")
    elif fmt == "pcd":
        names = "x y z" + (" normal_x normal_y normal_z" if has_normals else "")
        n = 6 if has_normals else 3
        header = [
            "# .PCD v0.7 - Point Cloud Data file format",
            "VERSION 0.7",
            f"FIELDS {names}",
            "SIZE " + " ".join(["8"] * n),
            "TYPE " + " ".join(["F"] * n),
            "COUNT " + " ".join(["1"] * n),
            f"WIDTH {len(cloud)}",
            "HEIGHT 1",
            "VIEWPOINT 0 0 0 1 0 0 0",
            f"POINTS {len(cloud)}",
            "DATA ascii",
        ]
        path.write_text("\n".join(header + rows) + "\n")
    else:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow(row.split())


# --------------------------------------------------------------------------
# Geometry preprocessing


def estimate_normals(cloud: PointCloud, k: int = 10, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from PCA over the k nearest neighbors.

    The normal is the eigenvector of the neighborhood scatter with the
    smallest eigenvalue, unit length, oriented so it points toward the
    viewpoint. Neighborhoods with (near) collinear scatter get a zero
    normal, which downstream point-to-plane code treats as missing.
    """
    from scipy.spatial import cKDTree

    n = len(cloud)
    if k < 3:
        raise InputError(f"normal estimation needs k >= 3, got {k}")
    if n < k:
        raise InputError(f"normal estimation with k={k} needs at least k points, got {n}")
    pts = cloud.points
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k)
    neigh = pts[idx]                            # (n, k, 3)
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    scatter = np.einsum("nki,nkj->nij", centered, centered)
    w, v = np.linalg.eigh(scatter)              # ascending eigenvalues
    normals = v[:, :, 0].copy()
    # Rank < 2 scatter: the plane normal is not defined.
    degenerate = w[:, 1] <= 1e-12 * np.maximum(w[:, 2], 1e-300)
    to_view = np.asarray(viewpoint, dtype=float) - pts
    flip = np.einsum("ni,ni->n", normals, to_view)
    normals[flip < 0.0] *= -1.0
    # Deterministic sign when the viewpoint lies in the tangent plane.
    ties = np.abs(flip) < 1e-12
    if ties.any():
        sub = normals[ties]
        lead = np.argmax(np.abs(sub), axis=1)
        sign = np.sign(sub[np.arange(len(sub)), lead])
        sub[sign < 0] *= -1.0
        normals[ties] = sub
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[degenerate] = 0.0
    return PointCloud(pts.copy(), normals)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """Replace all points in each cubic cell by their centroid.

    Output order is sorted by voxel index, which makes the result
    deterministic regardless of input order. Normals are dropped
    (recompute after downsampling if needed).
    """
    if voxel <= 0:
        raise InputError(f"voxel size must be positive, got {voxel}")
    pts = cloud.points
    origin = pts.min(axis=0)
    keys = np.floor((pts - origin) / voxel).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys_sorted = keys[order]
    pts_sorted = pts[order]
    new_cell = np.any(np.diff(keys_sorted, axis=0) != 0, axis=1)
    cell_starts = np.r_[0, np.flatnonzero(new_cell) + 1]
    sums = np.add.reduceat(pts_sorted, cell_starts, axis=0)
    counts = np.diff(np.r_[cell_starts, len(pts)])
    return PointCloud(sums / counts[:, None])
