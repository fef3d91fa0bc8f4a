"""Optimization loop: Adam with warmup + cosine schedule, deterministic
batch assembly, surface-bank refresh scheduling, CSV logging, and
checkpointing.

Determinism contract
--------------------
Every random draw inside :func:`fit` comes from a counter-based stream
keyed by ``(seed, purpose, iteration)``; no generator state is carried
between iterations.  Training can therefore be interrupted at any
checkpoint and resumed bit-exactly: the checkpoint stores parameters,
optimizer moments, the current surface-sample bank, and the iteration
counter, and every later draw is reconstructed from the seed alone.
Thread count cannot influence results because all reductions happen in
fixed order inside single NumPy kernel calls.
"""

from __future__ import annotations

import logging
import os
from collections import deque
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from ._rng import stream
from ._validation import check_count, check_positive
from .clouds import PointCloud
from .fields import (
    BoundingBox,
    FieldConfig,
    FieldParams,
    MlpField,
    init_geometric,
    load_field_checkpoint,
    save_field_checkpoint,
)
from .losses import COMPONENT_NAMES, LossConfig, LossValue, composite_loss
from .meshing import EmptyLevelSet
from .metrics import NearestNeighborIndex
from .sampling import (
    NormalizationTransform,
    SamplingConfig,
    SurfaceSampleBank,
    build_eikonal_spec,
    draw_surface_samples,
    eikonal_sample_points,
    local_gaussian_samples,
    normalize_cloud,
    refresh_bank,
)

__all__ = [
    "NumericalAbort",
    "TrainConfig",
    "TrainState",
    "lr_at",
    "adam_update",
    "adam_step",
    "fit",
    "save_train_checkpoint",
    "load_train_checkpoint",
    "LOG_COLUMNS",
]

logger = logging.getLogger("sdfit")

LOG_COLUMNS = (
    "iteration",
    "lr",
    "total",
    "data",
    "eikonal",
    "ssa",
    "surface_to_points",
    "accept_ratio",
)

HISTORY_LENGTH = 256


class NumericalAbort(RuntimeError):
    """Training stopped because a loss or gradient went non-finite."""

    def __init__(self, message: str, component: str | None = None):
        super().__init__(message)
        self.component = component


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters.

    ``base_lr`` 1e-3 suits clean and mildly noisy data; drop it to
    around 5e-5 for heavily corrupted clouds.
    """

    iterations: int = 40000
    base_lr: float = 1e-3
    warmup_iters: int = 1000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = dataclass_field(default_factory=LossConfig)
    log_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        check_count(self.iterations, "iterations")
        check_positive(self.base_lr, "base_lr")
        check_count(self.warmup_iters, "warmup_iters")
        if self.warmup_iters > self.iterations:
            raise ValueError("warmup_iters must not exceed iterations")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        check_positive(self.adam_eps, "adam_eps")
        check_count(self.log_every, "log_every")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


@dataclass
class TrainState:
    """Mutable optimizer state; ``iteration`` is the next one to run."""

    params: FieldParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    iteration: int
    seed: int
    transform: NormalizationTransform
    bank: SurfaceSampleBank | None = None
    history: deque = dataclass_field(default_factory=lambda: deque(maxlen=HISTORY_LENGTH))

    @property
    def field(self) -> MlpField:
        return MlpField(self.params)


def lr_at(iteration: int, config: TrainConfig) -> float:
    """Learning rate: linear ramp over the warmup, cosine decay after.

    The ramp starts at ``base_lr / warmup_iters`` (not zero) so the
    first step moves; it reaches ``base_lr`` exactly at the warmup
    boundary, and the cosine leg reaches zero at ``iterations``.
    """
    if iteration < 0 or iteration > config.iterations:
        raise ValueError("iteration outside the schedule range")
    if iteration < config.warmup_iters:
        return config.base_lr * (iteration + 1) / config.warmup_iters
    span = max(1, config.iterations - config.warmup_iters)
    phase = (iteration - config.warmup_iters) / span
    return config.base_lr * 0.5 * (1.0 + np.cos(np.pi * phase))


def adam_update(theta, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step on flat arrays; returns (theta, m, v).

    ``t`` is the 1-based step count. Pure function: inputs untouched.
    """
    if not np.isfinite(grad).all():
        raise NumericalAbort("non-finite gradient passed to the optimizer")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * (grad * grad)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta, m, v


def adam_step(state: TrainState, gradient: np.ndarray, lr: float, config: TrainConfig) -> TrainState:
    """Apply one Adam step to the state in place and advance ``iteration``."""
    gradient = np.asarray(gradient)
    if gradient.shape != state.adam_m.shape:
        raise ValueError("gradient length does not match the parameter count")
    theta = state.params.to_flat()
    theta, state.adam_m, state.adam_v = adam_update(
        theta,
        gradient,
        state.adam_m,
        state.adam_v,
        state.iteration + 1,
        lr,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    )
    state.params = FieldParams.from_flat(state.params.config, theta)
    state.iteration += 1
    return state


def _diagnose_nonfinite(value: LossValue) -> str:
    for name in COMPONENT_NAMES:
        if not np.isfinite(value.components[name]):
            return name
    return "total"


def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def save_train_checkpoint(path, state: TrainState) -> None:
    """Checkpoint = field snapshot + optimizer moments + bank + counters."""
    extras = {
        "iteration": state.iteration,
        "seed": state.seed,
        "transform_center": ",".join(_format_float(c) for c in state.transform.center),
        "transform_scale": _format_float(state.transform.scale),
    }
    blocks = {"adam_m": state.adam_m, "adam_v": state.adam_v}
    if state.bank is not None:
        extras["bank_refreshed_at"] = state.bank.refreshed_at_iteration
        extras["bank_facets"] = state.bank.triangle_count
        extras["bank_measure"] = _format_float(state.bank.total_area)
        blocks["bank"] = state.bank.points
    save_field_checkpoint(path, state.params, extras=extras, blocks=blocks)


def load_train_checkpoint(path) -> TrainState:
    """Rebuild a TrainState saved by :func:`save_train_checkpoint`."""
    params, extras, blocks = load_field_checkpoint(path)
    required = {"iteration", "seed", "transform_center", "transform_scale"}
    missing = required - extras.keys()
    if missing:
        raise ValueError(f"not a training checkpoint; missing {sorted(missing)}")
    center = tuple(float(c) for c in extras["transform_center"].split(","))
    transform = NormalizationTransform(center, float(extras["transform_scale"]))
    bank = None
    if "bank" in blocks:
        pts = np.asarray(blocks["bank"], dtype=np.float64)
        bank = SurfaceSampleBank(
            pts.reshape(-1, params.config.input_dim),
            int(extras["bank_refreshed_at"]),
            int(extras["bank_facets"]),
            float(extras["bank_measure"]),
        )
    dtype = params.config.dtype
    return TrainState(
        params=params,
        adam_m=np.asarray(blocks["adam_m"], dtype=dtype),
        adam_v=np.asarray(blocks["adam_v"], dtype=dtype),
        iteration=int(extras["iteration"]),
        seed=int(extras["seed"]),
        transform=transform,
        bank=bank,
    )


def _refresh_bank_with_retry(field, box, sampling, seed, iteration) -> SurfaceSampleBank:
    rng = stream(seed, "bank", iteration)
    try:
        return refresh_bank(field, box, sampling, rng, iteration=iteration)
    except EmptyLevelSet:
        logger.warning(
            "empty level set at iteration %d; retrying extraction at double resolution",
            iteration,
        )
        try:
            return refresh_bank(
                field,
                box,
                sampling,
                rng,
                iteration=iteration,
                resolution=2 * sampling.train_mc_resolution,
            )
        except EmptyLevelSet as exc:
            raise NumericalAbort(
                f"level set vanished from the bounding region at iteration {iteration}; "
                "the field no longer crosses zero (try a smaller learning rate or a "
                "larger eikonal weight)",
            ) from exc


def fit(
    cloud: PointCloud,
    config: TrainConfig,
    field_config: FieldConfig | None = None,
    sampling: SamplingConfig | None = None,
    *,
    log_path=None,
    checkpoint_path=None,
    resume_from=None,
    stop_at_iteration: int | None = None,
) -> TrainState:
    """Fit an implicit surface to a point cloud.

    The cloud is normalized to the unit box internally; the transform
    is retained on the returned state (and in checkpoints) so meshes
    can be mapped back to input coordinates.  ``resume_from`` restarts
    from a training checkpoint and continues bit-exactly (the cloud,
    configs, and seed must match the original run — only the
    checkpoint's own counters are trusted).  ``stop_at_iteration``
    halts early after that many iterations, writing a final checkpoint
    if ``checkpoint_path`` is set; it exists so interruption can be
    exercised deterministically.

    Returns the final :class:`TrainState`.
    """
    field_config = field_config if field_config is not None else FieldConfig(input_dim=cloud.dim)
    sampling = sampling if sampling is not None else SamplingConfig()
    if field_config.input_dim != cloud.dim:
        raise ValueError("field input dimension does not match the cloud")
    variant = config.loss.variant

    norm_cloud, transform = normalize_cloud(cloud)
    points = norm_cloud.points
    n = points.shape[0]
    box = BoundingBox.unit(cloud.dim)

    if resume_from is not None:
        state = load_train_checkpoint(resume_from)
        if state.params.config != field_config:
            raise ValueError("checkpoint field configuration does not match field_config")
        if state.seed != config.seed:
            raise ValueError("checkpoint seed does not match the training config")
        if state.transform != transform:
            raise ValueError("checkpoint normalization does not match this cloud")
    else:
        params = init_geometric(field_config, config.seed)
        dtype = field_config.dtype
        state = TrainState(
            params=params,
            adam_m=np.zeros(field_config.n_params, dtype=dtype),
            adam_v=np.zeros(field_config.n_params, dtype=dtype),
            iteration=0,
            seed=config.seed,
            transform=transform,
        )

    eikonal_spec = build_eikonal_spec(points, sampling)
    cloud_index = (
        NearestNeighborIndex(points) if variant in ("diffcd", "neural-pull") else None
    )

    end = config.iterations if stop_at_iteration is None else min(config.iterations, stop_at_iteration)
    log_file = None
    if log_path is not None:
        append = state.iteration > 0 and os.path.exists(log_path)
        log_file = open(log_path, "a" if append else "w")
        if not append:
            log_file.write(",".join(LOG_COLUMNS) + "\n")

    try:
        while state.iteration < end:
            it = state.iteration
            field = state.field
            lr = lr_at(it, config)

            batch_idx = stream(config.seed, "cloud_batch", it).choice(
                n, size=sampling.batch_cloud, replace=sampling.batch_cloud > n
            )
            kwargs: dict = {"cloud_index": cloud_index}
            accept_ratio = 1.0
            if variant == "neural-pull":
                kwargs["pull_samples"] = local_gaussian_samples(
                    points, batch_idx, eikonal_spec, stream(config.seed, "eikonal_local", it)
                )
            else:
                kwargs["cloud_batch"] = points[batch_idx]
                kwargs["eikonal_samples"] = eikonal_sample_points(
                    points,
                    batch_idx,
                    eikonal_spec,
                    box,
                    stream(config.seed, "eikonal_global", it),
                    stream(config.seed, "eikonal_local", it),
                )
            if variant == "siren":
                kwargs["ssa_samples"] = box.sample_uniform(
                    stream(config.seed, "ssa", it), eikonal_spec.n_global
                )
            if variant == "diffcd":
                if state.bank is None or it % sampling.bank_refresh_every == 0:
                    state.bank = _refresh_bank_with_retry(
                        field, box, sampling, config.seed, it
                    )
                surface_samples, accept_ratio = draw_surface_samples(
                    state.bank,
                    field,
                    sampling.batch_surface,
                    sampling,
                    stream(config.seed, "surface_draw", it),
                )
                if accept_ratio < 0.1:
                    logger.warning(
                        "surface-sample acceptance %.3f at iteration %d; bank is stale",
                        accept_ratio,
                        it,
                    )
                if surface_samples.shape[0] == 0:
                    raise NumericalAbort(
                        f"no surface sample survived projection at iteration {it}",
                        component="surface_to_points",
                    )
                kwargs["surface_samples"] = surface_samples

            value = composite_loss(field, config.loss, **kwargs)
            if not np.isfinite(value.total):
                raise NumericalAbort(
                    f"non-finite loss at iteration {it} "
                    f"(component: {_diagnose_nonfinite(value)})",
                    component=_diagnose_nonfinite(value),
                )
            if not np.isfinite(value.gradient).all():
                component = _nonfinite_gradient_component(field, config.loss, kwargs)
                raise NumericalAbort(
                    f"non-finite gradient at iteration {it} (component: {component})",
                    component=component,
                )

            adam_step(state, value.gradient, lr, config)
            state.history.append(
                {"iteration": it, "total": value.total, **value.components}
            )

            if log_file is not None and (
                it % config.log_every == 0 or it == config.iterations - 1
            ):
                row = [
                    str(it),
                    _format_float(lr),
                    _format_float(value.total),
                    *(_format_float(value.components[k]) for k in COMPONENT_NAMES),
                    _format_float(accept_ratio),
                ]
                log_file.write(",".join(row) + "\n")
                log_file.flush()

            if (
                checkpoint_path is not None
                and config.checkpoint_every
                and state.iteration % config.checkpoint_every == 0
            ):
                save_train_checkpoint(checkpoint_path, state)
    finally:
        if log_file is not None:
            log_file.close()

    if checkpoint_path is not None:
        save_train_checkpoint(checkpoint_path, state)
    return state


def _nonfinite_gradient_component(field, loss_config: LossConfig, kwargs: dict) -> str:
    """Name the loss term whose gradient went non-finite (error path only)."""
    from . import losses

    probes = []
    if kwargs.get("cloud_batch") is not None:
        probes.append(("data", lambda: losses.data_term(field, kwargs["cloud_batch"])[1]))
    if kwargs.get("eikonal_samples") is not None:
        probes.append(
            ("eikonal", lambda: losses.eikonal_loss(field, kwargs["eikonal_samples"])[1])
        )
    if kwargs.get("ssa_samples") is not None:
        probes.append(
            (
                "ssa",
                lambda: losses.ssa_penalty(
                    field, kwargs["ssa_samples"], loss_config.ssa_sharpness
                )[1],
            )
        )
    if kwargs.get("surface_samples") is not None:
        probes.append(
            (
                "surface_to_points",
                lambda: losses.surface_to_points_term(
                    field, kwargs["surface_samples"], kwargs["cloud_index"]
                )[1],
            )
        )
    if kwargs.get("pull_samples") is not None:
        probes.append(
            (
                "data",
                lambda: losses.neural_pull_loss(
                    field, kwargs["pull_samples"], kwargs["cloud_index"]
                )[1],
            )
        )
    for name, probe in probes:
        try:
            grad = probe()
        except Exception:
            return name
        if grad is not None and not np.isfinite(grad).all():
            return name
    return "total"
