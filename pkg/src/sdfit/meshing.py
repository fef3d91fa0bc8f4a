"""Level-set extraction and mesh utilities.

Marching cubes (3D) and marching squares (2D) over a corner grid spanning
the bounding region, area/length-weighted uniform sampling, and the
mesh-quadrature estimate of the surface integral of 1/|grad f| used to
cross-check the sample-average loss.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._mc_tables import CORNER_OFFSETS, EDGE_CORNERS, TRIANGLE_EDGES
from ._svg import SvgCanvas
from .fields import BoundingBox


class EmptyLevelSet(RuntimeError):
    """The field has no zero crossing inside the bounding region."""


_EVAL_CHUNK = 65536


def _eval_chunked(field, points: np.ndarray) -> np.ndarray:
    out = np.empty(points.shape[0], dtype=np.float64)
    for start in range(0, points.shape[0], _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, points.shape[0])
        out[start:stop] = field.value(points[start:stop])
    return out


def _grad_chunked(field, points: np.ndarray) -> np.ndarray:
    out = np.empty_like(points, dtype=np.float64)
    for start in range(0, points.shape[0], _EVAL_CHUNK):
        stop = min(start + _EVAL_CHUNK, points.shape[0])
        out[start:stop] = field.spatial_grad(points[start:stop])
    return out


# ---------------------------------------------------------------------------
# mesh containers


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (nv, 3)
    faces: np.ndarray  # (nf, 3) int
    _face_areas: np.ndarray | None = dc_field(default=None, repr=False)
    _face_normals: np.ndarray | None = dc_field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def _cross(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return np.cross(b - a, c - a)

    @property
    def face_areas(self) -> np.ndarray:
        if self._face_areas is None:
            self._face_areas = 0.5 * np.linalg.norm(self._cross(), axis=1)
        return self._face_areas

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def face_unit_normals(self) -> np.ndarray:
        """Right-hand normals from vertex order; zero for degenerate faces."""
        if self._face_normals is None:
            cr = self._cross()
            norms = np.linalg.norm(cr, axis=1, keepdims=True)
            safe = np.where(norms > 0, norms, 1.0)
            self._face_normals = np.where(norms > 0, cr / safe, 0.0)
        return self._face_normals

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)


@dataclass
class Contour2D:
    """Zero-level polyline set: deduplicated vertices plus index pairs."""

    vertices: np.ndarray  # (nv, 2)
    edges: np.ndarray  # (ne, 2) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    @property
    def n_segments(self) -> int:
        return self.edges.shape[0]

    @property
    def segments(self) -> np.ndarray:
        """(n, 2, 2) array of segment endpoint pairs."""
        return self.vertices[self.edges]

    @property
    def segment_lengths(self) -> np.ndarray:
        seg = self.segments
        return np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1)

    @property
    def total_length(self) -> float:
        return float(self.segment_lengths.sum())

    def components(self) -> list[np.ndarray]:
        """Connected components as arrays of segment indices (union-find)."""
        parent = np.arange(len(self.vertices))

        def find(i):
            root = i
            while parent[root] != root:
                root = parent[root]
            while parent[i] != root:
                parent[i], i = root, parent[i]
            return root

        for a, b in self.edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[rb] = ra
        roots = np.fromiter((find(a) for a in self.edges[:, 0]), dtype=np.int64, count=self.n_segments)
        groups = {}
        for seg_idx, r in enumerate(roots):
            groups.setdefault(r, []).append(seg_idx)
        return [np.asarray(g, dtype=np.int64) for g in groups.values()]


# ---------------------------------------------------------------------------
# marching cubes

_EDGE_AXIS = np.empty(12, dtype=np.int64)
_EDGE_BASE = np.empty((12, 3), dtype=np.int64)
for _e, (_ca, _cb) in enumerate(EDGE_CORNERS):
    _oa = np.asarray(CORNER_OFFSETS[_ca])
    _ob = np.asarray(CORNER_OFFSETS[_cb])
    _EDGE_AXIS[_e] = int(np.argmax(np.abs(_oa - _ob)))
    _EDGE_BASE[_e] = np.minimum(_oa, _ob)

_TRI_TABLE = np.asarray(TRIANGLE_EDGES, dtype=np.int64)


def _grid_axes(box: BoundingBox, resolution: int) -> list[np.ndarray]:
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    return [
        np.linspace(box.lower_array[k], box.upper_array[k], resolution)
        for k in range(box.dim)
    ]


def marching_cubes(field, box: BoundingBox, resolution: int, level: float = 0.0) -> TriangleMesh:
    """Extract the level set as a triangle mesh.

    The grid has resolution^3 corners over the box. Faces are oriented so
    their right-hand normal points along the field gradient (outward for a
    signed distance convention).
    """
    if box.dim != 3:
        raise ValueError("marching_cubes requires a 3D bounding region")
    axes = _grid_axes(box, resolution)
    r = resolution
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    values = _eval_chunked(field, grid).reshape(r, r, r)
    if level != 0.0:
        values = values - level

    inside = values < 0
    code = np.zeros((r - 1, r - 1, r - 1), dtype=np.uint8)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        code |= inside[ox : r - 1 + ox, oy : r - 1 + oy, oz : r - 1 + oz].astype(np.uint8) << bit

    active = (code != 0) & (code != 255)
    ix, iy, iz = np.nonzero(active)
    if ix.size == 0:
        raise EmptyLevelSet("no zero crossing in the bounding region")
    codes = code[ix, iy, iz]

    tri_rows = _TRI_TABLE[codes][:, :15]  # 16th column is always the -1 sentinel
    mask = tri_rows >= 0
    edge_ids = tri_rows[mask]
    cell_ids = np.repeat(np.arange(ix.size), 15)[mask.ravel()]

    # global grid-edge key: orientation axis plus the lower corner coordinate
    gx = ix[cell_ids] + _EDGE_BASE[edge_ids, 0]
    gy = iy[cell_ids] + _EDGE_BASE[edge_ids, 1]
    gz = iz[cell_ids] + _EDGE_BASE[edge_ids, 2]
    keys = ((_EDGE_AXIS[edge_ids] * r + gx) * r + gy) * r + gz
    uniq, inverse = np.unique(keys, return_inverse=True)
    faces = inverse.reshape(-1, 3)

    # interpolate one vertex per unique crossed grid edge
    axis = uniq // (r * r * r)
    rem = uniq % (r * r * r)
    ux = rem // (r * r)
    uy = (rem // r) % r
    uz = rem % r
    step = np.eye(3, dtype=np.int64)[axis]
    va = values[ux, uy, uz]
    vb = values[ux + step[:, 0], uy + step[:, 1], uz + step[:, 2]]
    denom = va - vb
    denom = np.where(denom == 0, 1.0, denom)
    t = np.clip(va / denom, 0.0, 1.0)
    h = box.extents / (r - 1)
    pa = box.lower_array + np.stack([ux, uy, uz], axis=1) * h
    verts = pa + (t[:, None] * h[None, :]) * step

    mesh = TriangleMesh(verts, faces)
    _orient_faces_by_gradient(mesh, field)
    return mesh


def _orient_faces_by_gradient(mesh: TriangleMesh, field) -> None:
    """Flip faces whose right-hand normal opposes the field gradient."""
    if mesh.n_faces == 0:
        return
    centroids = mesh.face_centroids()
    grads = _grad_chunked(field, centroids)
    cr = mesh._cross()
    flip = np.einsum("ij,ij->i", cr, grads) < 0
    if np.any(flip):
        mesh.faces[flip] = mesh.faces[flip][:, [0, 2, 1]]
        mesh._face_normals = None
        mesh._face_areas = None


# ---------------------------------------------------------------------------
# marching squares

# cell corners c0=(0,0) c1=(1,0) c2=(1,1) c3=(0,1);
# edges e0=c0c1 (bottom), e1=c1c2 (right), e2=c2c3 (top), e3=c3c0 (left)
_MS_EDGE_AXIS = np.asarray([0, 1, 0, 1], dtype=np.int64)
_MS_EDGE_BASE = np.asarray([(0, 0), (1, 0), (0, 1), (0, 0)], dtype=np.int64)

# case -> flat list of crossed-edge pairs; saddle cases 5 and 10 are remapped
# to 16..19 after sampling the cell-center sign
_MS_SEGMENTS = {
    0: [],
    1: [0, 3],
    2: [0, 1],
    3: [1, 3],
    4: [1, 2],
    6: [0, 2],
    7: [2, 3],
    8: [2, 3],
    9: [0, 2],
    11: [1, 2],
    12: [1, 3],
    13: [0, 1],
    14: [0, 3],
    15: [],
    16: [0, 1, 2, 3],  # case 5, center inside: band along the main diagonal
    17: [0, 3, 1, 2],  # case 5, center outside: two isolated corners
    18: [0, 3, 1, 2],  # case 10, center inside
    19: [0, 1, 2, 3],  # case 10, center outside
}


def marching_squares(field, box: BoundingBox, resolution: int, level: float = 0.0) -> Contour2D:
    """Extract the 2D level set as a set of polyline segments."""
    if box.dim != 2:
        raise ValueError("marching_squares requires a 2D bounding region")
    axes = _grid_axes(box, resolution)
    r = resolution
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    values = _eval_chunked(field, grid).reshape(r, r)
    if level != 0.0:
        values = values - level

    inside = values < 0
    code = (
        inside[:-1, :-1].astype(np.uint8)
        | (inside[1:, :-1].astype(np.uint8) << 1)
        | (inside[1:, 1:].astype(np.uint8) << 2)
        | (inside[:-1, 1:].astype(np.uint8) << 3)
    )
    active = (code != 0) & (code != 15)
    ix, iy = np.nonzero(active)
    if ix.size == 0:
        return Contour2D(np.zeros((0, 2)), np.zeros((0, 2), dtype=np.int64))
    codes = code[ix, iy].astype(np.int64)

    # resolve saddles by the sign of the field at the cell center
    saddle = (codes == 5) | (codes == 10)
    if np.any(saddle):
        h = box.extents / (r - 1)
        centers = box.lower_array + (np.stack([ix[saddle], iy[saddle]], axis=1) + 0.5) * h
        c_in = np.asarray(field.value(centers)) - level < 0
        five = codes[saddle] == 5
        codes[np.nonzero(saddle)[0]] = np.where(
            five, np.where(c_in, 16, 17), np.where(c_in, 18, 19)
        )

    seg_table = np.full((20, 4), -1, dtype=np.int64)
    for case, entries in _MS_SEGMENTS.items():
        seg_table[case, : len(entries)] = entries
    rows = seg_table[codes]
    mask = rows >= 0
    edge_ids = rows[mask]
    cell_ids = np.repeat(np.arange(ix.size), 4)[mask.ravel()]

    gx = ix[cell_ids] + _MS_EDGE_BASE[edge_ids, 0]
    gy = iy[cell_ids] + _MS_EDGE_BASE[edge_ids, 1]
    keys = (_MS_EDGE_AXIS[edge_ids] * r + gx) * r + gy
    uniq, inverse = np.unique(keys, return_inverse=True)
    edges = inverse.reshape(-1, 2)

    axis = uniq // (r * r)
    rem = uniq % (r * r)
    ux = rem // r
    uy = rem % r
    step = np.eye(2, dtype=np.int64)[axis]
    va = values[ux, uy]
    vb = values[ux + step[:, 0], uy + step[:, 1]]
    denom = va - vb
    denom = np.where(denom == 0, 1.0, denom)
    t = np.clip(va / denom, 0.0, 1.0)
    h = box.extents / (r - 1)
    pa = box.lower_array + np.stack([ux, uy], axis=1) * h
    verts = pa + (t[:, None] * h[None, :]) * step
    return Contour2D(verts, edges)


# ---------------------------------------------------------------------------
# uniform sampling


def sample_mesh_uniform(mesh: TriangleMesh, n: int, rng: np.random.Generator, return_face_indices: bool = False):
    """Draw n points uniformly by area: weighted face choice, then uniform
    barycentric coordinates (u+v reflected into the lower triangle)."""
    if mesh.n_faces == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero total area")
    cum = np.cumsum(areas)
    picks = np.searchsorted(cum, rng.random(n) * total, side="right")
    picks = np.minimum(picks, mesh.n_faces - 1)
    a = mesh.vertices[mesh.faces[picks, 0]]
    b = mesh.vertices[mesh.faces[picks, 1]]
    c = mesh.vertices[mesh.faces[picks, 2]]
    u = rng.random(n)
    v = rng.random(n)
    over = u + v > 1.0
    u[over] = 1.0 - u[over]
    v[over] = 1.0 - v[over]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    if return_face_indices:
        return pts, picks
    return pts


def sample_contour_uniform(contour: Contour2D, n: int, rng: np.random.Generator, return_segment_indices: bool = False):
    """Draw n points uniformly by length along the contour segments."""
    if contour.n_segments == 0:
        raise ValueError("cannot sample an empty contour")
    if n < 1:
        raise ValueError("n must be >= 1")
    lengths = contour.segment_lengths
    total = lengths.sum()
    if total <= 0:
        raise ValueError("contour has zero total length")
    cum = np.cumsum(lengths)
    picks = np.searchsorted(cum, rng.random(n) * total, side="right")
    picks = np.minimum(picks, contour.n_segments - 1)
    seg = contour.segments[picks]
    t = rng.random(n)[:, None]
    pts = seg[:, 0] + t * (seg[:, 1] - seg[:, 0])
    if return_segment_indices:
        return pts, picks
    return pts


def surface_integral_inv_gradnorm(mesh: TriangleMesh, field) -> float:
    """Mesh-quadrature estimate of the integral of 1/|grad f| over the mesh.

    One-point quadrature at face centroids; equals the mesh area when the
    field is an exact signed distance (unit gradient).
    """
    if mesh.n_faces == 0:
        raise ValueError("empty mesh")
    grads = _grad_chunked(field, mesh.face_centroids())
    norms = np.linalg.norm(grads, axis=1)
    if np.any(norms < 1e-8):
        raise ValueError("gradient norm underflow at a face centroid; integrand unbounded")
    return float(np.sum(mesh.face_areas / norms))


def contour_integral_inv_gradnorm(contour: Contour2D, field) -> float:
    """2D analogue: integral of 1/|grad f| along the contour (midpoint rule)."""
    if contour.n_segments == 0:
        raise ValueError("empty contour")
    seg = contour.segments
    mids = 0.5 * (seg[:, 0] + seg[:, 1])
    grads = np.asarray(field.spatial_grad(mids))
    norms = np.linalg.norm(grads, axis=1)
    if np.any(norms < 1e-8):
        raise ValueError("gradient norm underflow at a segment midpoint")
    return float(np.sum(contour.segment_lengths / norms))


# ---------------------------------------------------------------------------
# export / import


def export_mesh_obj(path, mesh: TriangleMesh) -> None:
    """Wavefront OBJ: v/f records, 1-based indices, 9 significant digits."""
    with open(os.fspath(path), "w") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces + 1:
            fh.write(f"f {a} {b} {c}\n")


def load_mesh_obj(path) -> TriangleMesh:
    verts, faces = [], []
    with open(os.fspath(path), "r") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) < 3:
                    raise ValueError(f"{path}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1])
    if not verts or not faces:
        raise ValueError(f"{path}: OBJ has no geometry")
    return TriangleMesh(np.asarray(verts), np.asarray(faces))


def save_contour_csv(path, contour: Contour2D) -> None:
    with open(os.fspath(path), "w") as fh:
        fh.write("x0,y0,x1,y1\n")
        for (x0, y0), (x1, y1) in contour.segments:
            fh.write(f"{x0:.17g},{y0:.17g},{x1:.17g},{y1:.17g}\n")


def load_contour_csv(path) -> Contour2D:
    """Rebuild a contour saved by :func:`save_contour_csv`.

    Endpoints are welded by exact equality — the writer emits 17
    significant digits, so shared vertices survive the round trip
    bit-for-bit and connectivity (components, total length) is preserved.
    """
    with open(os.fspath(path)) as fh:
        header = fh.readline().strip()
        if header != "x0,y0,x1,y1":
            raise ValueError(f"not a contour file (header {header!r}): {path}")
        rows = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
    if rows.size == 0:
        return Contour2D(vertices=np.zeros((0, 2)), edges=np.zeros((0, 2), dtype=int))
    if rows.shape[1] != 4:
        raise ValueError(f"contour rows must have 4 columns: {path}")
    endpoints = rows.reshape(-1, 2)
    vertices, inverse = np.unique(endpoints, axis=0, return_inverse=True)
    edges = inverse.reshape(-1, 2)
    return Contour2D(vertices=vertices, edges=edges)


def save_contour_svg(path, contour: Contour2D, box: BoundingBox, cloud_points=None) -> None:
    canvas = SvgCanvas(
        (box.lower_array[0], box.upper_array[0]),
        (box.lower_array[1], box.upper_array[1]),
    )
    canvas.frame()
    if contour.n_segments:
        canvas.segments(contour.segments)
    if cloud_points is not None and len(cloud_points):
        canvas.scatter(np.asarray(cloud_points)[:, :2])
    canvas.save(path)
