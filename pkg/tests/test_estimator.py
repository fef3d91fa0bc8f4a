"""Estimator front door: sklearn contract, signed-distance predictions."""
import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sdfit._rng import stream
from sdfit.estimator import SurfaceReconstructor
from sdfit.meshing import Contour2D, TriangleMesh


def small_estimator(**kw):
    defaults = dict(
        variant="igr", iterations=300, warmup_iters=30, hidden_layers=2,
        hidden_width=16, batch_cloud=64, batch_surface=64,
        bank_refresh_every=50, log_every=100,
    )
    defaults.update(kw)
    return SurfaceReconstructor(**defaults)


def ring(n=128, radius=1.0, center=(0.0, 0.0), seed=0):
    ang = stream(seed, "demo").uniform(0.0, 2 * np.pi, size=n)
    return np.asarray(center) + radius * np.column_stack([np.cos(ang), np.sin(ang)])


def test_sklearn_params_and_clone():
    est = small_estimator(seed=5)
    params = est.get_params()
    assert params["variant"] == "igr" and params["seed"] == 5
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(iterations=77)
    assert est.iterations == 77


def test_unfitted_raises():
    est = small_estimator()
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((1, 2)))
    with pytest.raises(NotFittedError):
        est.extract_surface()


def test_fit_predict_signed_distance_2d():
    X = ring(radius=2.0, center=(10.0, -3.0))
    est = small_estimator().fit(X)
    assert est.n_features_in_ == 2
    queries = np.array([
        [10.0, -3.0],   # center: inside
        [13.0, -3.0],   # a unit outside the ring
        [12.0, -3.0],   # on the ring
    ])
    values = est.predict(queries)
    assert values.shape == (3,)
    assert values[0] < -0.5          # deep inside, in input units
    assert values[1] > 0.3           # clearly outside
    assert abs(values[2]) < 0.25     # near the surface
    # magnitudes are in input units: the inside value is on the order of
    # the true distance 2
    assert -3.0 < values[0] < -1.0


def test_extract_surface_in_input_coordinates():
    X = ring(radius=2.0, center=(10.0, -3.0))
    est = small_estimator().fit(X)
    contour = est.extract_surface(resolution=128)
    assert isinstance(contour, Contour2D)
    radii = np.linalg.norm(contour.vertices - np.array([10.0, -3.0]), axis=1)
    assert abs(np.median(radii) - 2.0) < 0.2
    assert contour.total_length == pytest.approx(2 * np.pi * 2.0, rel=0.15)


def test_score_is_negative_chamfer():
    X = ring(radius=1.0)
    est = small_estimator().fit(X)
    s = est.score(X)
    assert s <= 0.0
    assert s > -0.25  # a sane fit stays close to its own training cloud


def test_fit_is_seed_deterministic():
    X = ring()
    a = small_estimator(seed=3).fit(X).predict(np.array([[0.3, 0.1]]))
    b = small_estimator(seed=3).fit(X).predict(np.array([[0.3, 0.1]]))
    assert np.array_equal(a, b)


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        small_estimator(variant="poisson").fit(ring())
    with pytest.raises(ValueError):
        small_estimator().fit(np.zeros((5, 4)))
    est = small_estimator().fit(ring())
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 3)))  # dim mismatch with the fit


def test_three_dimensional_fit_and_mesh():
    dirs = stream(0, "demo").standard_normal((300, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    X = 0.35 * dirs
    est = small_estimator(iterations=200, warmup_iters=20).fit(X)
    probe = est.predict(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.7]]))
    assert probe[0] < -0.1 and probe[1] > 0.1
    mesh = est.extract_surface(resolution=48)
    assert isinstance(mesh, TriangleMesh)
    assert mesh.n_faces > 100
    radii = np.linalg.norm(mesh.vertices, axis=1)
    assert abs(np.median(radii) - 0.35) < 0.1
