"""Shape evaluation: exact nearest neighbors, Chamfer-family distances, and
the normal-angle metric with a global orientation flip."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._validation import as_points, as_unit_normals


class NearestNeighborIndex:
    """Exact nearest-neighbor queries over a fixed point set.

    Ties are broken toward the lowest point index so results are
    deterministic and match a brute-force argmin.
    """

    def __init__(self, points):
        self.points = as_points(points)
        if self.points.shape[0] == 0:
            raise ValueError("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Return (indices, distances) of the exact nearest neighbor."""
        q = as_points(queries, dim=self.points.shape[1], name="queries")
        k = min(8, self.n)
        dists, idx = self._tree.query(q, k=k)
        if k == 1:
            return idx.reshape(-1), dists.reshape(-1)
        best = dists[:, 0]
        ties = (dists == best[:, None]).sum(axis=1)
        chosen = idx[:, 0].copy()
        for row in np.nonzero(ties > 1)[0]:
            kk = k
            d_row, i_row = dists[row], idx[row]
            # widen until a strictly larger distance bounds the tie group
            while kk < self.n and np.all(d_row == d_row[0]):
                kk = min(self.n, kk * 2)
                d_row, i_row = self._tree.query(q[row], k=kk)
            chosen[row] = i_row[d_row == d_row[0]].min()
        return chosen, best


def chamfer_one_sided(a, b) -> float:
    """Mean distance from each point of a to its nearest point of b."""
    a = as_points(a, name="a")
    b = as_points(b, name="b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    _, dists = NearestNeighborIndex(b).query(a)
    return float(dists.mean())


def chamfer(a, b) -> float:
    """Symmetric: the average of the two one-sided means."""
    return 0.5 * (chamfer_one_sided(a, b) + chamfer_one_sided(b, a))


def chamfer_squared(a, b) -> float:
    """Symmetric Chamfer with squared distances inside the means."""
    a = as_points(a, name="a")
    b = as_points(b, name="b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    _, d_ab = NearestNeighborIndex(b).query(a)
    _, d_ba = NearestNeighborIndex(a).query(b)
    return 0.5 * (float(np.mean(d_ab**2)) + float(np.mean(d_ba**2)))


def _mean_angle_deg(dots: np.ndarray) -> float:
    return float(np.degrees(np.arccos(np.clip(dots, -1.0, 1.0))).mean())


def chamfer_angle(a_points, a_normals, b_points, b_normals) -> float:
    """Mean angle between normals at nearest-neighbor pairs, both ways.

    Per-point angles are oriented (range [0, 180] degrees, no absolute
    value); the metric is evaluated with b's normals as-is and globally
    negated, and the smaller mean is returned. Global orientation of either
    input therefore cannot affect the result.
    """
    a_pts = as_points(a_points, name="a_points")
    b_pts = as_points(b_points, name="b_points")
    a_nrm = as_unit_normals(a_normals, a_pts.shape[0], a_pts.shape[1])
    b_nrm = as_unit_normals(b_normals, b_pts.shape[0], b_pts.shape[1])
    idx_ab, _ = NearestNeighborIndex(b_pts).query(a_pts)
    idx_ba, _ = NearestNeighborIndex(a_pts).query(b_pts)
    dots_ab = np.einsum("ij,ij->i", a_nrm, b_nrm[idx_ab])
    dots_ba = np.einsum("ij,ij->i", b_nrm, a_nrm[idx_ba])
    as_is = 0.5 * (_mean_angle_deg(dots_ab) + _mean_angle_deg(dots_ba))
    flipped = 0.5 * (_mean_angle_deg(-dots_ab) + _mean_angle_deg(-dots_ba))
    return min(as_is, flipped)


@dataclass(frozen=True)
class ShapeMetrics:
    """Raw metric values; the x100 / x100^2 scaling is presentation only."""

    cd: float
    cd2: float
    ca_degrees: float  # NaN when either side lacks normals

    @property
    def cd_scaled(self) -> float:
        return 100.0 * self.cd

    @property
    def cd2_scaled(self) -> float:
        return 100.0**2 * self.cd2


def compute_metrics(a_points, b_points, a_normals=None, b_normals=None) -> ShapeMetrics:
    cd = chamfer(a_points, b_points)
    cd2 = chamfer_squared(a_points, b_points)
    if a_normals is not None and b_normals is not None:
        ca = chamfer_angle(a_points, a_normals, b_points, b_normals)
    else:
        ca = float("nan")
    return ShapeMetrics(cd, cd2, ca)


METRICS_COLUMNS = ("shape", "variant", "cd", "cd2", "ca_deg", "n_samples", "seed")


def metrics_csv_row(shape: str, variant: str, metrics: ShapeMetrics, n_samples: int, seed: int) -> dict:
    """One report row; cd/cd2 carry the x100 / x100^2 presentation scaling."""
    return {
        "shape": shape,
        "variant": variant,
        "cd": f"{metrics.cd_scaled:.17g}",
        "cd2": f"{metrics.cd2_scaled:.17g}",
        "ca_deg": "" if np.isnan(metrics.ca_degrees) else f"{metrics.ca_degrees:.17g}",
        "n_samples": str(n_samples),
        "seed": str(seed),
    }


def write_metrics_csv(path, rows: list[dict], append: bool = False) -> None:
    path = os.fspath(path)
    fresh = not (append and os.path.exists(path))
    with open(path, "a" if not fresh else "w") as fh:
        if fresh:
            fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row[c] for c in METRICS_COLUMNS) + "\n")
