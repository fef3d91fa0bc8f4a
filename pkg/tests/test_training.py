"""Training loop: schedule, optimizer, determinism, checkpoints, logs."""
import numpy as np
import pytest

from sdfit._rng import stream
from sdfit.clouds import PointCloud
from sdfit.fields import FieldConfig
from sdfit.losses import LossConfig
from sdfit.sampling import SamplingConfig
from sdfit.training import (
    LOG_COLUMNS,
    NumericalAbort,
    TrainConfig,
    adam_update,
    fit,
    load_train_checkpoint,
    lr_at,
    save_train_checkpoint,
)

FIELD_2D = FieldConfig(input_dim=2, hidden_layers=2, hidden_width=16,
                       skip_layers=(1,), precision=32)
SAMPLING_SMALL = SamplingConfig(
    bank_refresh_every=10, bank_size=500, train_mc_resolution=32,
    batch_surface=50, batch_cloud=30, n_global=20,
)


def circle_cloud(n=60, seed=0):
    rng = stream(seed, "demo")
    ang = rng.uniform(0.0, 2 * np.pi, size=n)
    return PointCloud(0.3 * np.column_stack([np.cos(ang), np.sin(ang)]))


def small_train(variant="diffcd", iterations=25, **kw):
    return TrainConfig(
        iterations=iterations, warmup_iters=5, log_every=5, seed=0,
        loss=LossConfig(variant=variant), **kw,
    )


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------


def test_lr_warmup_and_cosine_boundaries():
    cfg = TrainConfig(iterations=100, warmup_iters=10, base_lr=1e-3)
    assert lr_at(0, cfg) == 1e-3 / 10  # first step moves
    assert lr_at(9, cfg) == 1e-3  # ramp tops out exactly
    assert lr_at(10, cfg) == 1e-3  # cosine starts from the top
    assert lr_at(100, cfg) == 0.0  # cosine ends exactly at zero
    mid = lr_at(55, cfg)
    assert np.isclose(mid, 1e-3 * 0.5 * (1 + np.cos(np.pi * 45 / 90)))


def test_lr_monotone_decay_after_warmup():
    cfg = TrainConfig(iterations=50, warmup_iters=5, base_lr=1.0)
    values = [lr_at(i, cfg) for i in range(5, 51)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_lr_range_checked():
    cfg = TrainConfig(iterations=10, warmup_iters=2)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)
    with pytest.raises(ValueError):
        lr_at(11, cfg)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_matches_reference_formulas():
    theta = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    grad = np.array([0.5, -1.0])
    new_theta, new_m, new_v = adam_update(theta, grad, m, v, t=1, lr=0.1)
    want_m = 0.1 * grad
    want_v = 0.001 * grad**2
    m_hat = want_m / (1 - 0.9)
    v_hat = want_v / (1 - 0.999)
    want_theta = theta - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert np.allclose(new_theta, want_theta, rtol=1e-15)
    assert np.allclose(new_m, want_m) and np.allclose(new_v, want_v)
    # inputs untouched
    assert np.array_equal(theta, [1.0, -2.0]) and np.array_equal(m, np.zeros(2))


def test_adam_keeps_float32():
    theta = np.zeros(3, dtype=np.float32)
    g = np.ones(3, dtype=np.float32)
    new_theta, new_m, new_v = adam_update(theta, g, theta.copy(), theta.copy(),
                                          t=3, lr=1e-3)
    assert new_theta.dtype == np.float32
    assert new_m.dtype == np.float32 and new_v.dtype == np.float32


def test_adam_rejects_nonfinite_gradient():
    z = np.zeros(2)
    with pytest.raises(NumericalAbort):
        adam_update(z, np.array([np.nan, 0.0]), z, z, t=1, lr=1e-3)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=10, warmup_iters=20)
    with pytest.raises(ValueError):
        TrainConfig(adam_beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(base_lr=-1e-3)


# ---------------------------------------------------------------------------
# end-to-end determinism
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["igr", "siren", "neural-pull", "diffcd"])
def test_fit_deterministic_per_variant(variant):
    cloud = circle_cloud()
    cfg = small_train(variant)
    a = fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL)
    b = fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL)
    assert np.array_equal(a.params.to_flat(), b.params.to_flat())
    assert np.array_equal(a.adam_m, b.adam_m)
    assert a.iteration == b.iteration == cfg.iterations


def test_seed_changes_trajectory():
    cloud = circle_cloud()
    a = fit(cloud, small_train(), field_config=FIELD_2D, sampling=SAMPLING_SMALL)
    cfg_b = TrainConfig(iterations=25, warmup_iters=5, log_every=5, seed=1,
                        loss=LossConfig(variant="diffcd"))
    b = fit(cloud, cfg_b, field_config=FIELD_2D, sampling=SAMPLING_SMALL)
    assert not np.array_equal(a.params.to_flat(), b.params.to_flat())


def test_loss_decreases_on_mismatched_target():
    # an ellipse: the spherical initialization is wrong along the short
    # axis, so the data term must fall for the fit to make progress
    rng = stream(3, "demo")
    ang = rng.uniform(0.0, 2 * np.pi, size=80)
    cloud = PointCloud(np.column_stack([0.4 * np.cos(ang), 0.15 * np.sin(ang)]))
    cfg = TrainConfig(iterations=200, warmup_iters=20, log_every=50, seed=0,
                      loss=LossConfig(variant="igr"))
    state = fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL)
    totals = [row["total"] for row in state.history]
    assert len(totals) == 200  # deque keeps the whole short run
    assert np.mean(totals[-20:]) < np.mean(totals[:20])


# ---------------------------------------------------------------------------
# interruption and resume
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", ["diffcd", "neural-pull"])
def test_resume_bit_identical(tmp_path, variant):
    cloud = circle_cloud()
    cfg = small_train(variant)

    log_full = tmp_path / "full.csv"
    full = fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
               log_path=log_full)

    # interrupt mid bank window (iteration 13 of 25, refresh every 10)
    ckpt = tmp_path / "part.ckpt"
    log_part = tmp_path / "part.csv"
    fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
        log_path=log_part, checkpoint_path=ckpt, stop_at_iteration=13)
    resumed = fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
                  log_path=log_part, resume_from=ckpt)

    assert np.array_equal(full.params.to_flat(), resumed.params.to_flat())
    assert np.array_equal(full.adam_m, resumed.adam_m)
    assert np.array_equal(full.adam_v, resumed.adam_v)
    assert log_full.read_text() == log_part.read_text()


def test_resume_rejects_seed_mismatch(tmp_path):
    cloud = circle_cloud()
    cfg = small_train()
    ckpt = tmp_path / "part.ckpt"
    fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
        checkpoint_path=ckpt, stop_at_iteration=7)
    other_seed = TrainConfig(iterations=25, warmup_iters=5, log_every=5, seed=9,
                             loss=LossConfig(variant="diffcd"))
    with pytest.raises(ValueError):
        fit(cloud, other_seed, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
            resume_from=ckpt)


def test_resume_rejects_architecture_mismatch(tmp_path):
    cloud = circle_cloud()
    cfg = small_train()
    ckpt = tmp_path / "part.ckpt"
    fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
        checkpoint_path=ckpt, stop_at_iteration=7)
    wider = FieldConfig(input_dim=2, hidden_layers=2, hidden_width=32,
                        skip_layers=(1,), precision=32)
    with pytest.raises(ValueError):
        fit(cloud, cfg, field_config=wider, sampling=SAMPLING_SMALL,
            resume_from=ckpt)


def test_checkpoint_round_trip(tmp_path):
    cloud = circle_cloud()
    state = fit(cloud, small_train(), field_config=FIELD_2D,
                sampling=SAMPLING_SMALL, stop_at_iteration=11)
    path = tmp_path / "state.ckpt"
    save_train_checkpoint(path, state)
    loaded = load_train_checkpoint(path)
    assert loaded.iteration == state.iteration == 11
    assert loaded.seed == state.seed
    assert np.array_equal(loaded.params.to_flat(), state.params.to_flat())
    assert np.array_equal(loaded.adam_m, state.adam_m)
    assert np.array_equal(loaded.adam_v, state.adam_v)
    assert loaded.transform == state.transform
    assert loaded.bank is not None
    assert np.array_equal(loaded.bank.points, state.bank.points)
    assert loaded.bank.refreshed_at_iteration == state.bank.refreshed_at_iteration


# ---------------------------------------------------------------------------
# logging
# ---------------------------------------------------------------------------


def test_log_columns_and_schedule(tmp_path):
    cloud = circle_cloud()
    log = tmp_path / "train.csv"
    fit(cloud, small_train(iterations=23), field_config=FIELD_2D,
        sampling=SAMPLING_SMALL, log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS)
    iters = [int(row.split(",")[0]) for row in lines[1:]]
    assert iters == [0, 5, 10, 15, 20, 22]  # every 5 plus the final iteration
    # floats are %.17g re-parseable and finite
    for row in lines[1:]:
        cells = row.split(",")
        assert len(cells) == len(LOG_COLUMNS)
        assert all(np.isfinite(float(c)) for c in cells[1:])


def test_accept_ratio_one_for_non_bank_variants(tmp_path):
    cloud = circle_cloud()
    log = tmp_path / "train.csv"
    fit(cloud, small_train("igr", iterations=11), field_config=FIELD_2D,
        sampling=SAMPLING_SMALL, log_path=log)
    rows = log.read_text().splitlines()[1:]
    ratios = {row.split(",")[-1] for row in rows}
    assert ratios == {"1"}


def test_resume_rejects_cloud_mismatch(tmp_path):
    cloud = circle_cloud()
    cfg = small_train()
    ckpt = tmp_path / "part.ckpt"
    fit(cloud, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
        checkpoint_path=ckpt, stop_at_iteration=7)
    shifted = PointCloud(cloud.points + 2.0)  # different normalization center
    with pytest.raises(ValueError):
        fit(shifted, cfg, field_config=FIELD_2D, sampling=SAMPLING_SMALL,
            resume_from=ckpt)
