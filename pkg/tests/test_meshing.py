"""Level-set extraction, mesh/contour sampling, surface integrals, file IO."""
import numpy as np
import pytest

from sdfit._rng import stream
from sdfit.fields import AnalyticSdf, BoundingBox
from sdfit.meshing import (
    Contour2D,
    EmptyLevelSet,
    contour_integral_inv_gradnorm,
    export_mesh_obj,
    load_mesh_obj,
    marching_cubes,
    marching_squares,
    sample_contour_uniform,
    sample_mesh_uniform,
    save_contour_csv,
    save_contour_svg,
    surface_integral_inv_gradnorm,
)

SPHERE_R = 0.35
SPHERE_AREA = 4.0 * np.pi * SPHERE_R**2


# ---------------------------------------------------------------------------
# marching cubes
# ---------------------------------------------------------------------------


def test_sphere_area_converges():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    box = BoundingBox.unit(3)
    mesh64 = marching_cubes(sdf, box, 64)
    mesh128 = marching_cubes(sdf, box, 128)
    err64 = abs(mesh64.total_area - SPHERE_AREA) / SPHERE_AREA
    err128 = abs(mesh128.total_area - SPHERE_AREA) / SPHERE_AREA
    assert err128 < 0.01
    assert err128 < err64  # refining the grid improves the estimate


def test_sphere_vertices_on_surface():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 64)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    # linear interpolation along edges: error is O(h^2), h = 1/64
    assert np.abs(radii - SPHERE_R).max() < 5e-4


def test_plane_cross_section_area():
    sdf = AnalyticSdf.plane((1.0, 0.0, 0.0), 0.0)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 32)
    assert abs(mesh.total_area - 1.0) < 0.01


def test_faces_oriented_along_gradient():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 32)
    normals = mesh.face_unit_normals
    centers = mesh.face_centroids()
    outward = centers / np.linalg.norm(centers, axis=1, keepdims=True)
    # normals follow the field gradient (outward for an SDF)
    assert np.all((normals * outward).sum(axis=1) > 0.5)


def test_empty_level_set_raises():
    sdf = AnalyticSdf.constant(0.2, dim=3)
    with pytest.raises(EmptyLevelSet):
        marching_cubes(sdf, BoundingBox.unit(3), 16)


def test_nonzero_level():
    sdf = AnalyticSdf.sphere(radius=0.2)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 64, level=0.1)
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert np.abs(radii - 0.3).max() < 5e-4  # SDF level c is the r+c sphere


# ---------------------------------------------------------------------------
# marching squares
# ---------------------------------------------------------------------------


def test_circle_length_and_vertices():
    sdf = AnalyticSdf.circle(0.3)
    contour = marching_squares(sdf, BoundingBox.unit(2), 128)
    assert abs(contour.total_length - 2 * np.pi * 0.3) / (2 * np.pi * 0.3) < 0.01
    radii = np.linalg.norm(contour.vertices, axis=1)
    assert np.abs(radii - 0.3).max() < 1e-3


def test_marching_squares_empty_is_silent():
    sdf = AnalyticSdf.constant(0.2, dim=2)
    contour = marching_squares(sdf, BoundingBox.unit(2), 32)
    assert contour.n_segments == 0


def test_components_split():
    # two circles side by side -> two connected components
    left = AnalyticSdf.sphere(center=(-0.25, 0.0), radius=0.12)
    right = AnalyticSdf.sphere(center=(0.25, 0.0), radius=0.12)

    class Union:
        def value(self, x):
            return np.minimum(left.value(x), right.value(x))

    contour = marching_squares(Union(), BoundingBox.unit(2), 128)
    comps = contour.components()
    assert len(comps) == 2
    sizes = sorted(len(c) for c in comps)
    assert sizes[0] > 10  # both are real loops, not specks


# ---------------------------------------------------------------------------
# uniform sampling
# ---------------------------------------------------------------------------


def test_mesh_sampling_uniform_on_sphere():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 64)
    rng = stream(0, "metrics")
    pts, faces = sample_mesh_uniform(mesh, 20000, rng, return_face_indices=True)
    assert pts.shape == (20000, 3) and faces.shape == (20000,)
    # points lie on their faces (barycentric sampling)
    assert np.abs(np.linalg.norm(pts, axis=1) - SPHERE_R).max() < 2e-3
    # area-uniform: octant counts near-equal (within 5 sigma of binomial)
    octant = (pts[:, 0] > 0).astype(int) * 4 + (pts[:, 1] > 0) * 2 + (pts[:, 2] > 0)
    counts = np.bincount(octant, minlength=8)
    expected = 20000 / 8
    assert np.abs(counts - expected).max() < 5 * np.sqrt(expected)


def test_contour_sampling_uniform_on_circle():
    sdf = AnalyticSdf.circle(0.3)
    contour = marching_squares(sdf, BoundingBox.unit(2), 128)
    rng = stream(0, "metrics")
    pts, segs = sample_contour_uniform(contour, 8000, rng, return_segment_indices=True)
    assert pts.shape == (8000, 2) and segs.shape == (8000,)
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    counts, _ = np.histogram(angles, bins=8, range=(-np.pi, np.pi))
    expected = 8000 / 8
    assert np.abs(counts - expected).max() < 5 * np.sqrt(expected)


def test_sampling_deterministic():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 32)
    a = sample_mesh_uniform(mesh, 100, stream(1, "metrics"))
    b = sample_mesh_uniform(mesh, 100, stream(1, "metrics"))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# surface integrals of 1/|grad|
# ---------------------------------------------------------------------------


def test_integral_unit_gradient_equals_area():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 64)
    integral = surface_integral_inv_gradnorm(mesh, sdf)
    assert np.isclose(integral, mesh.total_area, rtol=1e-6)


def test_integral_scales_inversely_with_gradient():
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 64)
    for c in (0.5, 2.0):
        scaled = AnalyticSdf.scaled(sdf, c)
        integral = surface_integral_inv_gradnorm(mesh, scaled)
        assert np.isclose(integral, mesh.total_area / c, rtol=1e-6)


def test_contour_integral_matches_length():
    sdf = AnalyticSdf.circle(0.3)
    contour = marching_squares(sdf, BoundingBox.unit(2), 128)
    integral = contour_integral_inv_gradnorm(contour, sdf)
    assert np.isclose(integral, contour.total_length, rtol=1e-6)


# ---------------------------------------------------------------------------
# file IO
# ---------------------------------------------------------------------------


def test_obj_round_trip(tmp_path):
    sdf = AnalyticSdf.sphere(radius=SPHERE_R)
    mesh = marching_cubes(sdf, BoundingBox.unit(3), 24)
    path = tmp_path / "sphere.obj"
    export_mesh_obj(path, mesh)
    loaded = load_mesh_obj(path)
    assert loaded.n_faces == mesh.n_faces
    assert np.allclose(loaded.vertices, mesh.vertices, atol=1e-12)
    assert np.array_equal(loaded.faces, mesh.faces)


def test_contour_files(tmp_path):
    sdf = AnalyticSdf.circle(0.3)
    contour = marching_squares(sdf, BoundingBox.unit(2), 64)
    csv_path = tmp_path / "contour.csv"
    save_contour_csv(csv_path, contour)
    text = csv_path.read_text().splitlines()
    assert len(text) == contour.n_segments + 1  # header + one row per segment
    assert text[0].count(",") >= 3

    svg_path = tmp_path / "contour.svg"
    save_contour_svg(svg_path, contour, BoundingBox.unit(2),
                     cloud_points=np.zeros((3, 2)))
    svg = svg_path.read_text()
    assert svg.startswith("<svg") and "</svg>" in svg


def test_contour_csv_round_trip(tmp_path):
    from sdfit.meshing import load_contour_csv

    sdf = AnalyticSdf.circle(0.3)
    contour = marching_squares(sdf, BoundingBox.unit(2), 64)
    path = tmp_path / "contour.csv"
    save_contour_csv(path, contour)
    loaded = load_contour_csv(path)
    assert loaded.n_segments == contour.n_segments
    assert loaded.total_length == pytest.approx(contour.total_length, rel=1e-15)
    # exact welding preserves connectivity: one closed loop stays one
    assert len(loaded.components()) == len(contour.components()) == 1
    # row order and endpoint order are preserved, and 17 significant
    # digits make the float round trip exact
    assert np.array_equal(loaded.segments, contour.segments)
    with pytest.raises(ValueError):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        load_contour_csv(bad)


def test_contour2d_segment_properties():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    contour = Contour2D(verts, np.array([[0, 1], [1, 2]]))
    assert contour.n_segments == 2
    assert np.isclose(contour.total_length, 2.0)
    assert contour.segments.shape == (2, 2, 2)
