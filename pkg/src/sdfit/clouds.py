"""Point cloud container and file I/O (ASCII XYZ, ASCII/binary PLY).

Normals, when present, are carried for metric oracles only; the losses never
read them (unoriented setting).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ._validation import as_points


@dataclass
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = as_points(self.points)
        if self.points.shape[1] not in (2, 3):
            raise ValueError(
                f"points must be 2- or 3-dimensional, got {self.points.shape[1]}"
            )
        if self.normals is not None:
            self.normals = as_points(self.normals, dim=self.points.shape[1], name="normals")
            if self.normals.shape[0] != self.points.shape[0]:
                raise ValueError("normals count does not match points count")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.normals)


def load_cloud(path) -> PointCloud:
    """Read a point cloud from an .xyz or .ply file (by extension)."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"point cloud file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return _load_ply(path)
    if ext in (".xyz", ".txt", ""):
        return _load_xyz(path)
    raise ValueError(f"unsupported point cloud format {ext!r} (expected .xyz or .ply)")


def save_cloud_xyz(path, cloud: PointCloud) -> None:
    """Write one point per line; appends normal components when present."""
    data = cloud.points
    if cloud.normals is not None:
        data = np.concatenate([cloud.points, cloud.normals], axis=1)
    np.savetxt(os.fspath(path), data, fmt="%.17g")


def _load_xyz(path: str) -> PointCloud:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: not a numeric row") from exc
    if not rows:
        raise ValueError(f"{path}: no points")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: inconsistent column count")
    data = np.asarray(rows, dtype=np.float64)
    if width in (2, 3):
        return PointCloud(data)
    if width == 6:  # x y z nx ny nz
        return PointCloud(data[:, :3], data[:, 3:6])
    if width == 4:  # x y nx ny
        return PointCloud(data[:, :2], data[:, 2:4])
    raise ValueError(f"{path}: expected 2, 3, 4, or 6 columns, got {width}")


_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "char": "<i1",
    "int8": "<i1",
    "uchar": "<u1",
    "uint8": "<u1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def _load_ply(path: str) -> PointCloud:
    with open(path, "rb") as fh:
        raw = fh.read()

    # header is ASCII regardless of body encoding
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    end = raw.index(b"\n", end) + 1
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end:]

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_str)])
    current = None
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            current = (parts[1], int(parts[2]), [])
            elements.append(current)
        elif parts[0] == "property":
            if current is None:
                raise ValueError(f"{path}: property before element")
            if parts[1] == "list":
                current[2].append((parts[-1], ("list", parts[2], parts[3])))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise ValueError(f"{path}: unsupported property type {parts[1]}")
                current[2].append((parts[-1], _PLY_TYPES[parts[1]]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ValueError(f"{path}: unsupported PLY format {fmt!r}")

    vertex = next((e for e in elements if e[0] == "vertex"), None)
    if vertex is None:
        raise ValueError(f"{path}: PLY has no vertex element")
    _, count, props = vertex
    names = [p[0] for p in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ValueError(f"{path}: vertex element lacks property {axis}")
    if any(isinstance(p[1], tuple) for p in props):
        raise ValueError(f"{path}: list properties on vertices are not supported")

    if fmt == "ascii":
        text = body.decode("ascii").splitlines()
        data_rows = []
        for line in text:
            line = line.strip()
            if line:
                data_rows.append(line.split())
            if len(data_rows) == count:
                break
        if len(data_rows) < count:
            raise ValueError(f"{path}: truncated PLY vertex data")
        table = np.asarray([[float(v) for v in row[: len(props)]] for row in data_rows])
        cols = {name: table[:, i] for i, (name, _) in enumerate(props)}
    else:
        # vertex element comes first in practice; enforce to keep offsets simple
        if elements[0][0] != "vertex":
            raise ValueError(f"{path}: binary PLY with non-leading vertex element")
        dtype = np.dtype([(name, typ) for name, typ in props])
        need = count * dtype.itemsize
        if len(body) < need:
            raise ValueError(f"{path}: truncated PLY vertex data")
        rec = np.frombuffer(body, dtype=dtype, count=count)
        cols = {name: rec[name].astype(np.float64) for name, _ in props}

    points = np.stack([cols["x"], cols["y"], cols["z"]], axis=1).astype(np.float64)
    normals = None
    if all(k in cols for k in ("nx", "ny", "nz")):
        normals = np.stack([cols["nx"], cols["ny"], cols["nz"]], axis=1).astype(np.float64)
    return PointCloud(points, normals)
