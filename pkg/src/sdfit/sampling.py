"""Stochastic point generation for training.

Covers cloud normalization, level-set projection by gradient descent on the
field value (SDF-descent), the mesh-backed surface sample bank, and the
eikonal sample scheme (global uniform points plus per-cloud-point local
Gaussians with neighbor-scaled standard deviations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_count, check_positive
from .clouds import PointCloud
from .fields import BoundingBox
from .meshing import (
    EmptyLevelSet,
    marching_cubes,
    marching_squares,
    sample_contour_uniform,
    sample_mesh_uniform,
)

GRAD_NORM_FLOOR = 1e-8


@dataclass(frozen=True)
class SamplingConfig:
    bank_refresh_every: int = 1000  # iterations between bank rebuilds
    bank_size: int = 100000
    descent_steps: int = 4
    accept_tol: float = 0.001
    train_mc_resolution: int = 128
    local_knn_k: int = 50
    local_std_scale: float = 0.2
    n_global: int = 625
    batch_surface: int = 5000
    batch_cloud: int = 5000

    def __post_init__(self):
        check_count(self.bank_refresh_every, "bank_refresh_every")
        check_count(self.bank_size, "bank_size")
        check_count(self.descent_steps, "descent_steps")
        check_positive(self.accept_tol, "accept_tol")
        check_count(self.train_mc_resolution, "train_mc_resolution", minimum=2)
        check_count(self.local_knn_k, "local_knn_k")
        check_positive(self.local_std_scale, "local_std_scale")
        check_count(self.n_global, "n_global")
        check_count(self.batch_surface, "batch_surface")
        check_count(self.batch_cloud, "batch_cloud")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationTransform:
    """x_normalized = (x - center) / scale; stored for exact inversion."""

    center: tuple[float, ...]
    scale: float

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center_array) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.center_array

    @classmethod
    def identity(cls, dim: int) -> "NormalizationTransform":
        return cls(tuple([0.0] * dim), 1.0)


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, NormalizationTransform]:
    """Center on the bounding-box midpoint and scale by the longest side so
    the cloud fits in [-0.5, 0.5]^d. Normals are direction-only and carry over."""
    if cloud.n == 0:
        raise ValueError("cannot normalize an empty cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    scale = float((hi - lo).max())
    if scale <= 0:
        raise ValueError("cloud has zero extent; all points identical")
    center = (lo + hi) / 2.0
    transform = NormalizationTransform(tuple(center.tolist()), scale)
    return cloud.with_points(transform.apply(cloud.points)), transform


# ---------------------------------------------------------------------------
# SDF-descent projection


def sdf_descent_batch(field, points: np.ndarray, steps: int, accept_tol: float):
    """Project points toward the zero-level set by repeating
    x <- x - f(x) * g(x)/|g(x)| for `steps` iterations.

    Returns (projected, accepted, final_values). A point is rejected when the
    gradient norm underflows at any step or when |f| stays above accept_tol.
    For an exact signed distance field a single step lands on the closest
    surface point.
    """
    if steps < 1:
        raise ValueError("descent needs at least one step")
    pts = np.array(points, dtype=np.float64, copy=True)
    alive = np.ones(pts.shape[0], dtype=bool)
    for _ in range(steps):
        if not np.any(alive):
            break
        vals, grads = field.value_and_spatial_grad(pts[alive])
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        grads = np.asarray(grads, dtype=np.float64)
        norms = np.linalg.norm(grads, axis=1)
        ok = norms >= GRAD_NORM_FLOOR
        idx = np.nonzero(alive)[0]
        alive[idx[~ok]] = False
        moved = idx[ok]
        pts[moved] -= (vals[ok] / norms[ok])[:, None] * grads[ok]
    final = np.asarray(field.value(pts), dtype=np.float64).reshape(-1)
    accepted = alive & (np.abs(final) <= accept_tol)
    return pts, accepted, final


def sdf_descent(field, point, steps: int, accept_tol: float):
    """Single-point convenience wrapper; returns (point, accepted)."""
    pts, acc, _ = sdf_descent_batch(field, np.asarray(point, dtype=np.float64)[None, :], steps, accept_tol)
    return pts[0], bool(acc[0])


# ---------------------------------------------------------------------------
# surface sample bank


@dataclass
class SurfaceSampleBank:
    points: np.ndarray  # (bank_size, dim)
    refreshed_at_iteration: int
    triangle_count: int
    total_area: float

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def refresh_bank(
    field,
    box: BoundingBox,
    cfg: SamplingConfig,
    rng: np.random.Generator,
    iteration: int = 0,
    resolution: int | None = None,
) -> SurfaceSampleBank:
    """Extract the current level set and draw a uniform point bank from it.

    Raises EmptyLevelSet when the field has no zero crossing in the box.
    """
    res = cfg.train_mc_resolution if resolution is None else resolution
    if box.dim == 3:
        mesh = marching_cubes(field, box, res)
        pts = sample_mesh_uniform(mesh, cfg.bank_size, rng)
        count = mesh.n_faces
        area = mesh.total_area
    else:
        contour = marching_squares(field, box, res)
        if contour.n_segments == 0:
            raise EmptyLevelSet("no zero crossing in the bounding region")
        pts = sample_contour_uniform(contour, cfg.bank_size, rng)
        count = contour.n_segments
        area = contour.total_length
    return SurfaceSampleBank(pts, iteration, count, area)


def draw_surface_samples(
    bank: SurfaceSampleBank,
    field,
    k: int,
    cfg: SamplingConfig,
    rng: np.random.Generator,
):
    """Draw k bank points, project them onto the current level set, and keep
    the accepted ones. Returns (points, acceptance_ratio); a ratio below 0.1
    tells the caller the bank is stale."""
    if bank.n == 0:
        raise ValueError("surface sample bank is empty")
    if k == 0:
        return np.zeros((0, bank.dim)), 1.0
    picks = rng.integers(0, bank.n, size=k)
    pts, accepted, final = sdf_descent_batch(
        field, bank.points[picks], cfg.descent_steps, cfg.accept_tol
    )
    kept = pts[accepted]
    # by construction; a violation here means the descent bookkeeping broke
    if kept.size and np.abs(final[accepted]).max() > cfg.accept_tol:
        raise AssertionError("accepted surface sample violates the residual tolerance")
    return kept, float(accepted.mean())


# ---------------------------------------------------------------------------
# eikonal sample points


@dataclass
class EikonalSampleSpec:
    """Per-cloud-point local standard deviations plus the global count."""

    sigmas: np.ndarray  # (n,)
    n_global: int

    def __post_init__(self):
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64).reshape(-1)
        if np.any(self.sigmas <= 0):
            raise ValueError("local standard deviations must be positive")


def build_eikonal_spec(cloud_points: np.ndarray, cfg: SamplingConfig) -> EikonalSampleSpec:
    """Precompute sigma_i = local_std_scale * (distance to the rank-th nearest
    neighbor of point i), rank = min(local_knn_k, n-1). Computed once per fit."""
    pts = np.asarray(cloud_points, dtype=np.float64)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least 2 cloud points for local scales")
    rank = min(cfg.local_knn_k, n - 1)
    tree = cKDTree(pts)
    dists, _ = tree.query(pts, k=rank + 1)  # first hit is the point itself
    sigma = cfg.local_std_scale * dists[:, rank]
    # duplicated points can give a zero radius; fall back to the smallest
    # positive scale so the spec invariant (sigma > 0) holds
    if np.any(sigma <= 0):
        positive = sigma[sigma > 0]
        if positive.size == 0:
            raise ValueError("all neighbor distances are zero; cloud is degenerate")
        sigma = np.where(sigma > 0, sigma, positive.min())
    return EikonalSampleSpec(sigma, cfg.n_global)


def local_gaussian_samples(
    cloud_points: np.ndarray,
    batch_indices: np.ndarray,
    spec: EikonalSampleSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """One Gaussian perturbation of each batch point with its own sigma
    (unclamped; samples may leave the bounding region)."""
    pts = np.asarray(cloud_points, dtype=np.float64)
    idx = np.asarray(batch_indices, dtype=np.int64).reshape(-1)
    noise = rng.standard_normal((idx.size, pts.shape[1]))
    return pts[idx] + spec.sigmas[idx, None] * noise


def eikonal_sample_points(
    cloud_points: np.ndarray,
    batch_indices: np.ndarray,
    spec: EikonalSampleSpec,
    box: BoundingBox,
    rng_global: np.random.Generator,
    rng_local: np.random.Generator,
) -> np.ndarray:
    """n_global uniform points in the box followed by one Gaussian
    perturbation of each batch point with its own sigma (unclamped)."""
    global_pts = box.sample_uniform(rng_global, spec.n_global)
    local_pts = local_gaussian_samples(cloud_points, batch_indices, spec, rng_local)
    return np.concatenate([global_pts, local_pts], axis=0)
