"""Fitting objectives for implicit surface reconstruction.

Every objective is a sum of simple terms, each of which reports its raw
(unweighted) value together with an exact parameter gradient assembled
through :meth:`~sdfit.fields.MlpField.accumulate_param_grad`.  The terms
never differentiate through the point sets they are handed: closest-point
targets and surface samples are treated as constants of the current
iteration, which is what makes the gradients cheap (one fused
forward/reverse sweep per term) and well defined.

Variants
--------
``igr``
    mean ``|f|`` on the cloud + weighted eikonal penalty.
``siren``
    ``igr`` plus a weighted sharpened-indicator penalty
    ``mean(exp(-alpha * |f|))`` that discourages spurious level sets.
``neural-pull``
    pull-consistency loss alone: samples near the cloud are projected
    onto the zero set along the field gradient and matched to their
    nearest cloud point.
``diffcd``
    symmetric objective: half cloud-to-surface (mean ``|f|`` on the
    cloud) plus half surface-to-cloud (distance from surface samples to
    their nearest cloud point, differentiated through the implicit
    dependence of the surface on the parameters) plus the eikonal
    penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from ._validation import check_nonnegative, check_positive
from .metrics import NearestNeighborIndex
from .sampling import GRAD_NORM_FLOOR

__all__ = [
    "VARIANTS",
    "LossConfig",
    "LossValue",
    "data_term",
    "eikonal_loss",
    "ssa_penalty",
    "ssa_loss",
    "pull",
    "pull_consistency_loss",
    "neural_pull_loss",
    "surface_to_points_term",
    "surface_point_param_sensitivity",
    "composite_loss",
]

VARIANTS = ("igr", "siren", "neural-pull", "diffcd")

COMPONENT_NAMES = ("data", "eikonal", "ssa", "surface_to_points")

# Below this closest-point distance a sample sits numerically on its
# target and its direction is undefined; the sample still counts toward
# the loss value but contributes no gradient.
_TINY_DISTANCE = 1e-9

# Pull residuals shorter than this have an undefined unit direction.
_TINY_RESIDUAL = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Objective selection and term weights.

    Parameters
    ----------
    variant:
        One of :data:`VARIANTS`.
    eikonal_weight:
        Weight of the unit-gradient-norm penalty (unused by
        ``neural-pull``).
    ssa_weight:
        Weight of the sharpened-indicator penalty (``siren`` only).
        The weighted term is ``ssa_weight * mean(exp(-alpha |f|))``;
        the constant ``|domain| * alpha / 2`` prefactor of the area
        estimator is folded into this weight.
    ssa_sharpness:
        Sharpness ``alpha`` of the indicator ``exp(-alpha |f|)``.
    """

    variant: str = "diffcd"
    eikonal_weight: float = 0.1
    ssa_weight: float = 0.033
    ssa_sharpness: float = 100.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}"
            )
        check_nonnegative(self.eikonal_weight, "eikonal_weight")
        check_nonnegative(self.ssa_weight, "ssa_weight")
        check_positive(self.ssa_sharpness, "ssa_sharpness")

    def component_weights(self) -> dict[str, float]:
        """Weight applied to each raw component in the total."""
        weights = dict.fromkeys(COMPONENT_NAMES, 0.0)
        if self.variant == "igr":
            weights["data"] = 1.0
            weights["eikonal"] = self.eikonal_weight
        elif self.variant == "siren":
            weights["data"] = 1.0
            weights["eikonal"] = self.eikonal_weight
            weights["ssa"] = self.ssa_weight
        elif self.variant == "neural-pull":
            weights["data"] = 1.0
        else:  # diffcd
            weights["data"] = 0.5
            weights["surface_to_points"] = 0.5
            weights["eikonal"] = self.eikonal_weight
        return weights


@dataclass(frozen=True)
class LossValue:
    """One evaluation of a composite objective.

    ``total`` is exactly ``sum(weights[k] * components[k])``; components
    are stored unweighted so logs stay comparable across variants.
    ``gradient`` is the flat parameter gradient of the weighted total,
    or ``None`` when the field has no trainable parameters.
    """

    total: float
    components: dict[str, float]
    weights: dict[str, float]
    gradient: np.ndarray | None = None
    extra: dict[str, float] = dataclass_field(default_factory=dict)

    def recomputed_total(self) -> float:
        return float(
            sum(self.weights[k] * self.components[k] for k in COMPONENT_NAMES)
        )


def _is_trainable(field) -> bool:
    return hasattr(field, "accumulate_param_grad")


def data_term(field, cloud_batch: np.ndarray):
    """Mean absolute field value over a batch of cloud points.

    Returns ``(value, gradient)``; the gradient is ``None`` for fields
    without trainable parameters.  Points exactly on the zero set
    contribute zero gradient (the subgradient choice ``sign(0) = 0``).
    """
    cloud_batch = np.asarray(cloud_batch, dtype=np.float64)
    if cloud_batch.ndim != 2 or cloud_batch.shape[0] == 0:
        raise ValueError("data_term needs a non-empty (n, d) batch")
    if not _is_trainable(field):
        values = field.value(cloud_batch)
        return float(np.mean(np.abs(values))), None
    tape = field.forward_tape(cloud_batch)
    values = tape.values.astype(np.float64)
    value = float(np.mean(np.abs(values)))
    coeff = np.sign(values) / values.shape[0]
    grad = field.accumulate_param_grad(cloud_batch, coeff, None, tape=tape)
    return value, grad


def eikonal_loss(field, samples: np.ndarray, info: dict | None = None):
    """Mean squared deviation of the gradient norm from one.

    Samples whose gradient norm underflows ``GRAD_NORM_FLOOR``
    contribute the constant ``(0 - 1)^2 = 1`` to the value and nothing
    to the gradient; their count is reported through ``info`` under
    ``"grad_norm_underflow"`` when a dict is supplied.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("eikonal_loss needs a non-empty (n, d) sample set")
    if _is_trainable(field):
        tape = field.forward_tape(samples)
        grads = field.spatial_grad_from_tape(tape).astype(np.float64)
    else:
        tape = None
        grads = np.asarray(field.spatial_grad(samples), dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1)
    under = norms < GRAD_NORM_FLOOR
    if info is not None:
        info["grad_norm_underflow"] = int(np.count_nonzero(under))
    deviations = np.where(under, 1.0, norms - 1.0)
    value = float(np.mean(deviations**2))
    if tape is None:
        return value, None
    n = samples.shape[0]
    safe_norms = np.where(under, 1.0, norms)
    scale = np.where(under, 0.0, 2.0 * (norms - 1.0) / (n * safe_norms))
    grad_coeff = grads * scale[:, None]
    grad = field.accumulate_param_grad(samples, None, grad_coeff, tape=tape)
    return value, grad


def ssa_penalty(field, samples: np.ndarray, sharpness: float):
    """Mean sharpened indicator ``mean(exp(-alpha |f|))`` over samples.

    This is the raw penalty used inside the ``siren`` composite; the
    caller supplies uniform domain samples.  Returns
    ``(value, gradient)``.
    """
    check_positive(sharpness, "sharpness")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("ssa_penalty needs a non-empty (n, d) sample set")
    if not _is_trainable(field):
        values = np.asarray(field.value(samples), dtype=np.float64)
        return float(np.mean(np.exp(-sharpness * np.abs(values)))), None
    tape = field.forward_tape(samples)
    values = tape.values.astype(np.float64)
    kernel = np.exp(-sharpness * np.abs(values))
    value = float(np.mean(kernel))
    coeff = -sharpness * np.sign(values) * kernel / values.shape[0]
    grad = field.accumulate_param_grad(samples, coeff, None, tape=tape)
    return value, grad


def ssa_loss(field, box, sharpness: float, n_samples: int, rng: np.random.Generator):
    """Monte Carlo smoothed surface area of the zero level set.

    Estimates ``|domain| * (alpha / 2) * mean(exp(-alpha |f|))`` with
    ``n_samples`` uniform draws from ``box``.  As the sharpness grows
    the estimate converges (for unit-gradient fields) to the area of
    the zero set; for finite sharpness it counts a thin shell around
    every level set weighted by the local gradient norm.  Returns
    ``(value, gradient)``.
    """
    check_positive(sharpness, "sharpness")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    samples = box.sample_uniform(rng, n_samples)
    mean_kernel, grad = ssa_penalty(field, samples, sharpness)
    prefactor = box.volume * 0.5 * sharpness
    if grad is not None:
        grad = prefactor * grad
    return prefactor * mean_kernel, grad


def pull(field, points: np.ndarray) -> np.ndarray:
    """Project points toward the zero set along the field gradient.

    Computes ``x - f(x) * g / |g|`` where ``g`` is the spatial
    gradient.  Exact for a signed distance field; a single Newton-like
    step otherwise.  Raises ``ValueError`` when any gradient norm
    underflows; callers that tolerate degenerate samples must filter
    first.
    """
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    if squeeze:
        points = points[None, :]
    values, grads = field.value_and_spatial_grad(points)
    values = np.asarray(values, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1)
    if np.any(norms < GRAD_NORM_FLOOR):
        raise ValueError("pull: gradient norm underflow; filter degenerate points")
    pulled = points - (values / norms)[:, None] * grads
    return pulled[0] if squeeze else pulled


def pull_consistency_loss(field, samples: np.ndarray, targets: np.ndarray):
    """Mean distance between pulled samples and fixed target points.

    The inner workhorse of :func:`neural_pull_loss` with the
    closest-point assignment already resolved: ``targets[i]`` is the
    point that ``pull(samples[i])`` should land on.  Samples whose
    gradient norm underflows are dropped from both the value and the
    gradient (the mean divides by the kept count); residuals below
    ``1e-12`` keep their value but contribute no gradient.  Returns
    ``(value, gradient, kept)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if samples.shape != targets.shape or samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("samples and targets must be matching non-empty (n, d) arrays")
    trainable = _is_trainable(field)
    if trainable:
        tape = field.forward_tape(samples)
        values = tape.values.astype(np.float64)
        grads = field.spatial_grad_from_tape(tape).astype(np.float64)
    else:
        tape = None
        values, grads = field.value_and_spatial_grad(samples)
        values = np.asarray(values, dtype=np.float64)
        grads = np.asarray(grads, dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1)
    kept = norms >= GRAD_NORM_FLOOR
    n_kept = int(np.count_nonzero(kept))
    if n_kept == 0:
        raise ValueError("pull_consistency_loss: every sample had gradient underflow")
    safe_norms = np.where(kept, norms, 1.0)
    unit_grads = grads / safe_norms[:, None]
    pulled = samples - values[:, None] * unit_grads
    residuals = targets - pulled
    distances = np.linalg.norm(residuals, axis=1)
    value = float(np.sum(distances[kept]) / n_kept)
    if not trainable:
        return value, None, n_kept
    live = kept & (distances >= _TINY_RESIDUAL)
    safe_dist = np.where(live, distances, 1.0)
    unit_res = residuals / safe_dist[:, None]
    live_f = live.astype(np.float64)
    # d|residual|/dtheta = f_theta (r_hat . g_hat)
    #                    + (f / |g|) (P r_hat) . g_theta,  P = I - g_hat g_hat^T
    value_coeff = live_f * np.einsum("ij,ij->i", unit_res, unit_grads) / n_kept
    tangential = unit_res - np.einsum("ij,ij->i", unit_res, unit_grads)[:, None] * unit_grads
    grad_coeff = (live_f * values / (safe_norms * n_kept))[:, None] * tangential
    grad = field.accumulate_param_grad(samples, value_coeff, grad_coeff, tape=tape)
    return value, grad, n_kept


def neural_pull_loss(field, samples: np.ndarray, cloud_index: NearestNeighborIndex):
    """Pull-consistency loss against nearest cloud points.

    Each sample is assigned the cloud point nearest to the sample
    location (not to its pulled image), the assignment is frozen, and
    :func:`pull_consistency_loss` does the rest.  Returns
    ``(value, gradient, kept)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("neural_pull_loss needs a non-empty (n, d) sample set")
    indices, _ = cloud_index.query(samples)
    targets = cloud_index.points[indices]
    return pull_consistency_loss(field, samples, targets)


def surface_to_points_term(field, surface_samples: np.ndarray, cloud_index: NearestNeighborIndex):
    """Mean distance from surface samples to their nearest cloud point,
    differentiated through the surface.

    The samples are assumed to lie (numerically) on the zero level set.
    Moving the parameters moves the level set; the induced velocity of
    a surface point is ``-f_theta * g / |g|^2``, which turns the
    distance derivative into a plain field-value derivative with the
    per-sample coefficient ``-(x - target) . g / (|x - target| |g|^2)``.
    Samples with gradient-norm underflow are skipped (the mean divides
    by the kept count); samples already on a cloud point keep their
    (zero) value but contribute no gradient.  Returns
    ``(value, gradient, kept)``.
    """
    surface_samples = np.asarray(surface_samples, dtype=np.float64)
    if surface_samples.ndim != 2 or surface_samples.shape[0] == 0:
        raise ValueError("surface_to_points_term needs a non-empty (n, d) sample set")
    trainable = _is_trainable(field)
    if trainable:
        tape = field.forward_tape(surface_samples)
        grads = field.spatial_grad_from_tape(tape).astype(np.float64)
    else:
        tape = None
        grads = np.asarray(field.spatial_grad(surface_samples), dtype=np.float64)
    norms = np.linalg.norm(grads, axis=1)
    kept = norms >= GRAD_NORM_FLOOR
    n_kept = int(np.count_nonzero(kept))
    if n_kept == 0:
        raise ValueError("surface_to_points_term: every sample had gradient underflow")
    indices, distances = cloud_index.query(surface_samples)
    offsets = surface_samples - cloud_index.points[indices]
    value = float(np.sum(distances[kept]) / n_kept)
    if not trainable:
        return value, None, n_kept
    live = kept & (distances >= _TINY_DISTANCE)
    safe_dist = np.where(live, distances, 1.0)
    safe_sq = np.where(kept, norms, 1.0) ** 2
    alignment = np.einsum("ij,ij->i", offsets, grads)
    coeff = -live.astype(np.float64) * alignment / (safe_dist * safe_sq * n_kept)
    grad = field.accumulate_param_grad(surface_samples, coeff, None, tape=tape)
    return value, grad, n_kept


def surface_point_param_sensitivity(field, point: np.ndarray) -> np.ndarray:
    """Minimum-norm parameter sensitivity of a point on the zero set.

    Returns the ``(d, n_params)`` matrix ``-g f_theta^T / |g|^2``: the
    first-order displacement of a level-set point per unit change of
    each parameter, under the constraint that the point stays on the
    level set while moving along the gradient direction.  Satisfies
    ``g . dx/dtheta = -f_theta`` identically.  Intended for small
    fields (verification); the matrix is dense.
    """
    point = np.asarray(point, dtype=np.float64).reshape(-1)
    grad_x = np.asarray(field.spatial_grad(point), dtype=np.float64)
    norm_sq = float(grad_x @ grad_x)
    if norm_sq < GRAD_NORM_FLOOR**2:
        raise ValueError("surface_point_param_sensitivity: gradient norm underflow")
    grad_theta = field.param_grad(point).astype(np.float64)
    return -np.outer(grad_x, grad_theta) / norm_sq


def composite_loss(
    field,
    config: LossConfig,
    cloud_batch: np.ndarray | None = None,
    eikonal_samples: np.ndarray | None = None,
    ssa_samples: np.ndarray | None = None,
    surface_samples: np.ndarray | None = None,
    pull_samples: np.ndarray | None = None,
    cloud_index: NearestNeighborIndex | None = None,
) -> LossValue:
    """Evaluate the configured objective and its parameter gradient.

    Sample-set requirements by variant (missing sets raise
    ``ValueError``):

    - ``igr``: ``cloud_batch``, ``eikonal_samples``
    - ``siren``: ``igr`` inputs plus ``ssa_samples``
    - ``neural-pull``: ``pull_samples``, ``cloud_index``
    - ``diffcd``: ``igr`` inputs plus ``surface_samples`` and
      ``cloud_index``

    Components are stored unweighted; ``extra`` carries bookkeeping
    counters (gradient-norm underflows, kept sample counts).
    """
    weights = config.component_weights()
    components = dict.fromkeys(COMPONENT_NAMES, 0.0)
    extra: dict[str, float] = {}
    trainable = _is_trainable(field)
    grads: dict[str, np.ndarray] = {}

    def _require(name: str, value):
        if value is None:
            raise ValueError(f"variant {config.variant!r} requires {name}")
        return value

    if config.variant in ("igr", "siren", "diffcd"):
        batch = _require("cloud_batch", cloud_batch)
        value, grad = data_term(field, batch)
        components["data"] = value
        if grad is not None:
            grads["data"] = grad
        info: dict = {}
        samples = _require("eikonal_samples", eikonal_samples)
        value, grad = eikonal_loss(field, samples, info=info)
        components["eikonal"] = value
        extra["grad_norm_underflow"] = float(info.get("grad_norm_underflow", 0))
        if grad is not None:
            grads["eikonal"] = grad

    if config.variant == "siren":
        samples = _require("ssa_samples", ssa_samples)
        value, grad = ssa_penalty(field, samples, config.ssa_sharpness)
        components["ssa"] = value
        if grad is not None:
            grads["ssa"] = grad

    if config.variant == "diffcd":
        samples = _require("surface_samples", surface_samples)
        index = _require("cloud_index", cloud_index)
        value, grad, kept = surface_to_points_term(field, samples, index)
        components["surface_to_points"] = value
        extra["surface_samples_kept"] = float(kept)
        if grad is not None:
            grads["surface_to_points"] = grad

    if config.variant == "neural-pull":
        samples = _require("pull_samples", pull_samples)
        index = _require("cloud_index", cloud_index)
        value, grad, kept = neural_pull_loss(field, samples, index)
        components["data"] = value
        extra["pull_samples_kept"] = float(kept)
        if grad is not None:
            grads["data"] = grad

    total = float(sum(weights[k] * components[k] for k in COMPONENT_NAMES))
    gradient = None
    if trainable:
        gradient = np.zeros(field.config.n_params, dtype=field.config.dtype)
        for name, grad in grads.items():
            gradient += np.asarray(weights[name], dtype=gradient.dtype) * grad
    return LossValue(
        total=total,
        components=components,
        weights=weights,
        gradient=gradient,
        extra=extra,
    )
