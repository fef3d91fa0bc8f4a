"""MLP scalar field: forward pass, derivatives, init, checkpoints."""
import numpy as np
import pytest
from conftest import central_fd_param_grad, rel_err, small_field

from sdfit._rng import stream
from sdfit.fields import (
    AnalyticSdf,
    BoundingBox,
    FieldConfig,
    FieldParams,
    MlpField,
    init_geometric,
    load_field_checkpoint,
    save_field_checkpoint,
)


# ---------------------------------------------------------------------------
# configuration and shapes
# ---------------------------------------------------------------------------


def test_config_rejects_bad_dim():
    with pytest.raises(ValueError):
        FieldConfig(input_dim=4)


def test_config_rejects_out_of_range_skip():
    with pytest.raises(ValueError):
        FieldConfig(hidden_layers=2, skip_layers=(2,))
    with pytest.raises(ValueError):
        FieldConfig(hidden_layers=2, skip_layers=(0,))


def test_param_count_and_flat_round_trip(field64):
    flat = field64.params.to_flat()
    assert flat.ndim == 1
    assert flat.size == field64.params.config.n_params
    rebuilt = FieldParams.from_flat(field64.params.config, flat)
    assert np.array_equal(rebuilt.to_flat(), flat)


def test_value_shapes(field64):
    x = stream(0, "analysis").standard_normal((5, 3))
    vals = field64.value(x)
    assert vals.shape == (5,)
    v, g = field64.value_and_spatial_grad(x)
    assert v.shape == (5,) and g.shape == (5, 3)
    v1, g1 = field64.value_and_spatial_grad(x[0])
    assert np.isclose(v1, vals[0]) and g1.shape == (3,)


# ---------------------------------------------------------------------------
# geometric initialization
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dim", [2, 3])
def test_geometric_init_approximates_sphere_distance(dim):
    cfg = FieldConfig(input_dim=dim, hidden_layers=4, hidden_width=64,
                      skip_layers=(2,), precision=64)
    field = MlpField(init_geometric(cfg, seed=0))
    rng = stream(9, "analysis")
    x = rng.uniform(-0.5, 0.5, size=(512, dim))
    target = np.linalg.norm(x, axis=1) - cfg.init_radius
    dev = np.abs(field.value(x) - target)
    assert float(dev.mean()) < 0.1


def test_geometric_init_deterministic():
    cfg = FieldConfig(precision=32)
    a = init_geometric(cfg, seed=3).to_flat()
    b = init_geometric(cfg, seed=3).to_flat()
    assert np.array_equal(a, b)
    assert a.dtype == np.float32
    c = init_geometric(cfg, seed=4).to_flat()
    assert not np.array_equal(a, c)


# ---------------------------------------------------------------------------
# derivatives against finite differences (64-bit)
# ---------------------------------------------------------------------------


def test_spatial_grad_matches_fd(field64):
    rng = stream(2, "analysis")
    x = rng.uniform(-0.5, 0.5, size=(20, 3))
    _, grad = field64.value_and_spatial_grad(x)
    h = 1e-6
    for j in range(3):
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        fd = (field64.value(xp) - field64.value(xm)) / (2 * h)
        assert rel_err(grad[:, j], fd) < 1e-7


def test_param_grad_of_values_matches_dense_fd(field64):
    rng = stream(3, "analysis")
    x = rng.uniform(-0.5, 0.5, size=(7, 3))
    coeff = rng.standard_normal(7)

    analytic = field64.accumulate_param_grad(x, coeff, np.zeros((7, 3)))
    fd = central_fd_param_grad(lambda f: float(coeff @ f.value(x)), field64)
    assert rel_err(analytic, fd) < 1e-6


def test_param_grad_of_spatial_grads_matches_dense_fd(field64):
    rng = stream(4, "analysis")
    x = rng.uniform(-0.5, 0.5, size=(5, 3))
    vec = rng.standard_normal((5, 3))

    analytic = field64.accumulate_param_grad(x, np.zeros(5), vec)

    def scalar(f):
        _, g = f.value_and_spatial_grad(x)
        return float((g * vec).sum())

    fd = central_fd_param_grad(scalar, field64)
    assert rel_err(analytic, fd) < 1e-6


def test_param_grad_mixed_with_tape_reuse(field64):
    rng = stream(5, "analysis")
    x = rng.uniform(-0.5, 0.5, size=(6, 3))
    a = rng.standard_normal(6)
    vec = rng.standard_normal((6, 3))

    tape = field64.forward_tape(x)
    with_tape = field64.accumulate_param_grad(x, a, vec, tape=tape)
    without = field64.accumulate_param_grad(x, a, vec)
    assert np.array_equal(with_tape, without)

    def scalar(f):
        v, g = f.value_and_spatial_grad(x)
        return float(a @ v + (g * vec).sum())

    fd = central_fd_param_grad(scalar, field64)
    assert rel_err(with_tape, fd) < 1e-6


def test_float32_field_evaluates_and_differentiates():
    field = small_field(precision=32)
    x = stream(6, "analysis").uniform(-0.5, 0.5, size=(4, 3))
    v, g = field.value_and_spatial_grad(x)
    assert v.dtype == np.float32 and g.dtype == np.float32
    grad = field.accumulate_param_grad(x, np.ones(4), np.zeros((4, 3)))
    assert grad.dtype == np.float32


# ---------------------------------------------------------------------------
# analytic fields
# ---------------------------------------------------------------------------


def test_analytic_sphere_values_and_grads():
    sdf = AnalyticSdf.sphere(radius=0.35)
    x = np.array([[0.0, 0.0, 0.0], [0.35, 0.0, 0.0], [0.0, 0.7, 0.0]])
    v = sdf.value(x)
    assert np.allclose(v, [-0.35, 0.0, 0.35])
    _, g = sdf.value_and_spatial_grad(np.array([[0.2, 0.0, 0.0]]))
    assert np.allclose(g, [[1.0, 0.0, 0.0]])


def test_analytic_plane_circle_box_constant():
    plane = AnalyticSdf.plane((1.0, 0.0, 0.0), 0.0)
    assert np.allclose(plane.value(np.array([[0.3, 9.0, -2.0]])), [0.3])

    circ = AnalyticSdf.circle(0.3)
    assert np.allclose(circ.value(np.array([[0.3, 0.0]])), [0.0])

    box = AnalyticSdf.box((0.4, 0.4))
    inside = box.value(np.array([[0.0, 0.0]]))
    on_edge = box.value(np.array([[0.4, 0.0]]))
    outside = box.value(np.array([[0.8, 0.0]]))
    assert inside[0] < 0 and abs(on_edge[0]) < 1e-12 and np.isclose(outside[0], 0.4)

    const = AnalyticSdf.constant(0.2, dim=3)
    v, g = const.value_and_spatial_grad(np.zeros((2, 3)))
    assert np.allclose(v, 0.2) and np.allclose(g, 0.0)


def test_analytic_scaled_wrapper():
    sphere = AnalyticSdf.sphere(radius=0.35)
    half = AnalyticSdf.scaled(sphere, 0.5)
    x = np.array([[0.1, 0.2, -0.3]])
    assert np.allclose(half.value(x), 0.5 * sphere.value(x))
    _, g_half = half.value_and_spatial_grad(x)
    _, g_full = sphere.value_and_spatial_grad(x)
    assert np.allclose(g_half, 0.5 * g_full)


# ---------------------------------------------------------------------------
# bounding box
# ---------------------------------------------------------------------------


def test_bounding_box_unit_and_volume():
    box = BoundingBox.unit(3)
    assert box.dim == 3
    assert np.isclose(box.volume, 1.0)
    pts = box.sample_uniform(stream(0, "ssa"), 100)
    assert pts.shape == (100, 3)
    assert pts.min() >= -0.5 and pts.max() <= 0.5


def test_bounding_box_rejects_inverted():
    with pytest.raises(ValueError):
        BoundingBox((0.5, 0.0), (0.4, 1.0))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def test_field_checkpoint_round_trip_bit_exact(tmp_path):
    field = small_field(precision=32)
    extras = {"iteration": "17", "seed": "3"}
    blocks = {
        "adam_m": np.arange(field.params.config.n_params, dtype=np.float32),
        "bank": np.linspace(0.0, 1.0, 12, dtype=np.float64).reshape(4, 3),
    }
    path = tmp_path / "field.ckpt"
    save_field_checkpoint(path, field.params, extras=extras, blocks=blocks)

    params, got_extras, got_blocks = load_field_checkpoint(path)
    assert np.array_equal(params.to_flat(), field.params.to_flat())
    assert params.to_flat().dtype == np.float32
    assert got_extras["iteration"] == "17" and got_extras["seed"] == "3"
    assert got_blocks["adam_m"].dtype == np.float32
    assert np.array_equal(got_blocks["adam_m"], blocks["adam_m"])
    # float64 blocks keep their precision even when the field is float32
    assert got_blocks["bank"].dtype == np.float64
    assert np.array_equal(got_blocks["bank"].reshape(4, 3), blocks["bank"])


def test_field_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_field_checkpoint(path)
