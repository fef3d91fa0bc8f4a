"""Scalar fields: a trainable MLP and analytic signed-distance oracles.

The MLP maps 2D/3D points to a scalar whose zero-level set is the fitted
surface. Derivatives are computed from scratch in numpy:

  * value        - batched forward pass,
  * spatial_grad - reverse pass with respect to the input point,
  * accumulate_param_grad - the parameter gradient of
        sum_i [ a_i * f(x_i) + v_i . grad_x f(x_i) ]
    via a forward dual pass (direction v_i) followed by a reverse pass that
    carries both primal and dual adjoints.

Every loss gradient in the package reduces to one call of the accumulator
with per-point coefficients (a, v), so no per-point Jacobians are ever
materialized.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ._rng import stream
from ._validation import as_points, check_count, check_positive

_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# configuration and parameters


@dataclass(frozen=True)
class FieldConfig:
    """Architecture of the MLP scalar field."""

    input_dim: int = 3
    hidden_layers: int = 8
    hidden_width: int = 256
    skip_layers: tuple[int, ...] = (4,)
    activation_sharpness: float = 100.0
    init_radius: float = 0.5
    precision: int = 32

    def __post_init__(self):
        if self.input_dim not in (2, 3):
            raise ValueError(f"input_dim must be 2 or 3, got {self.input_dim}")
        check_count(self.hidden_layers, "hidden_layers")
        check_count(self.hidden_width, "hidden_width")
        skips = tuple(sorted(set(int(s) for s in self.skip_layers)))
        object.__setattr__(self, "skip_layers", skips)
        for s in skips:
            # 1-based hidden-layer indices; layer s sees the raw input again
            if not 1 <= s < self.hidden_layers:
                raise ValueError(
                    f"skip layer {s} out of range [1, {self.hidden_layers})"
                )
        check_positive(self.activation_sharpness, "activation_sharpness")
        check_positive(self.init_radius, "init_radius")
        if self.precision not in (32, 64):
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.precision == 32 else np.float64)

    def layer_in_dims(self) -> list[int]:
        """Input width of each hidden layer (base plus skip concatenation)."""
        dims = []
        for l in range(1, self.hidden_layers + 1):
            base = self.input_dim if l == 1 else self.hidden_width
            dims.append(base + self.input_dim if l in self.skip_layers else base)
        return dims

    def layer_base_dims(self) -> list[int]:
        return [
            self.input_dim if l == 1 else self.hidden_width
            for l in range(1, self.hidden_layers + 1)
        ]

    @property
    def n_params(self) -> int:
        total = 0
        for in_dim in self.layer_in_dims():
            total += self.hidden_width * in_dim + self.hidden_width
        total += self.hidden_width + 1  # output layer
        return total


@dataclass
class FieldParams:
    """MLP weights with an exact flat-vector view for the optimizer."""

    config: FieldConfig
    weights: list[np.ndarray] = field(repr=False)  # each (width, in_dim)
    biases: list[np.ndarray] = field(repr=False)  # each (width,)
    w_out: np.ndarray = field(repr=False)  # (width,)
    b_out: np.ndarray = field(repr=False)  # ()

    def to_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        parts.append(self.w_out)
        parts.append(np.atleast_1d(self.b_out))
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, config: FieldConfig, flat: np.ndarray) -> "FieldParams":
        flat = np.asarray(flat, dtype=config.dtype)
        if flat.shape != (config.n_params,):
            raise ValueError(
                f"flat vector has length {flat.shape}, expected ({config.n_params},)"
            )
        width = config.hidden_width
        weights, biases = [], []
        pos = 0
        for in_dim in config.layer_in_dims():
            n = width * in_dim
            weights.append(flat[pos : pos + n].reshape(width, in_dim).copy())
            pos += n
            biases.append(flat[pos : pos + width].copy())
            pos += width
        w_out = flat[pos : pos + width].copy()
        pos += width
        b_out = flat[pos].copy()
        return cls(config, weights, biases, w_out, b_out)

    def copy(self) -> "FieldParams":
        return FieldParams(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.w_out.copy(),
            self.b_out.copy(),
        )

    def astype(self, precision: int) -> "FieldParams":
        cfg = FieldConfig(
            input_dim=self.config.input_dim,
            hidden_layers=self.config.hidden_layers,
            hidden_width=self.config.hidden_width,
            skip_layers=self.config.skip_layers,
            activation_sharpness=self.config.activation_sharpness,
            init_radius=self.config.init_radius,
            precision=precision,
        )
        dt = cfg.dtype
        return FieldParams(
            cfg,
            [w.astype(dt) for w in self.weights],
            [b.astype(dt) for b in self.biases],
            self.w_out.astype(dt),
            self.b_out.astype(dt),
        )


def init_geometric(config: FieldConfig, seed: int, calibration_points: int = 2048) -> FieldParams:
    """Initialize so the zero-level set is approximately a sphere.

    Hidden weights ~ N(0, 2/width) with zero bias and a constant positive
    output layer make the raw field roughly proportional to ||x||. Because
    the smoothed activation damps that proportionality at this input scale,
    the two output-layer constants (scale and bias) are then calibrated by
    least squares against ||x|| - init_radius on points drawn from the same
    seeded stream, leaving the whole init a pure function of (config, seed).
    Layers that re-receive the input get a zero block for the input columns
    and sqrt(2)-scaled hidden columns so the concatenation rescale preserves
    activation variance and the sphere property.
    """
    rng = stream(seed, "init")
    width = config.hidden_width
    d = config.input_dim
    weights, biases = [], []
    for l, base in enumerate(config.layer_base_dims(), start=1):
        std = np.sqrt(2.0 / width)
        if l in config.skip_layers:
            w_hidden = rng.normal(0.0, std * _SQRT2, size=(width, base))
            w = np.concatenate([w_hidden, np.zeros((width, d))], axis=1)
        else:
            w = rng.normal(0.0, std, size=(width, base))
        weights.append(w)
        biases.append(np.zeros(width))
    direction = np.full(width, 1.0 / np.sqrt(width))
    params64 = FieldParams(
        FieldConfig(
            input_dim=config.input_dim,
            hidden_layers=config.hidden_layers,
            hidden_width=config.hidden_width,
            skip_layers=config.skip_layers,
            activation_sharpness=config.activation_sharpness,
            init_radius=config.init_radius,
            precision=64,
        ),
        weights,
        biases,
        direction,
        np.array(0.0),
    )

    pts = rng.random((calibration_points, d)) - 0.5
    resp = MlpField(params64).forward_tape(pts).values
    target = np.linalg.norm(pts, axis=1) - config.init_radius
    # closed-form 2x2 least squares for scale s and bias b of f = s*resp + b
    n = float(calibration_points)
    syy = float(resp @ resp)
    sy = float(resp.sum())
    syt = float(resp @ target)
    st = float(target.sum())
    det = syy * n - sy * sy
    if abs(det) > 1e-12 * max(1.0, syy * n):
        s = (syt * n - sy * st) / det
        b = (st * syy - sy * syt) / det
    else:  # degenerate response; fall back to the uncalibrated constants
        s = np.sqrt(np.pi)
        b = -config.init_radius
    w_out = s * direction
    b_out = np.array(b)

    dt = config.dtype
    return FieldParams(
        config,
        [w.astype(dt) for w in weights],
        [b.astype(dt) for b in biases],
        w_out.astype(dt),
        np.asarray(b_out, dtype=dt),
    )


# ---------------------------------------------------------------------------
# softplus with sharpness, numerically stable in float32


def _softplus(z: np.ndarray, beta: float) -> np.ndarray:
    bz = beta * z
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(bz))) / beta


def _sigmoid(bz: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(bz))
    return np.where(bz >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


class _Tape:
    """Cached intermediates of one batched forward pass."""

    __slots__ = ("x", "ins", "zs", "acts", "values")

    def __init__(self, x, ins, zs, acts, values):
        self.x = x
        self.ins = ins  # per layer: the (rescaled) input actually multiplied
        self.zs = zs  # per layer: pre-activations
        self.acts = acts  # per layer: activations
        self.values = values  # (n,)


class MlpField:
    """Trainable scalar field f(params, x)."""

    def __init__(self, params: FieldParams):
        self.params = params
        self.config = params.config

    @property
    def dim(self) -> int:
        return self.config.input_dim

    # -- forward ------------------------------------------------------------

    def _coerce(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=self.config.dtype)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise ValueError(f"points must have shape (n, {self.dim})")
        return arr, single

    def forward_tape(self, x: np.ndarray) -> _Tape:
        cfg = self.config
        p = self.params
        beta = cfg.activation_sharpness
        h = x
        ins, zs, acts = [], [], []
        for l, (w, b) in enumerate(zip(p.weights, p.biases), start=1):
            if l in cfg.skip_layers:
                inp = np.concatenate([h, x], axis=1) / self.config.dtype.type(_SQRT2)
            else:
                inp = h
            z = inp @ w.T + b
            h = _softplus(z, beta)
            ins.append(inp)
            zs.append(z)
            acts.append(h)
        values = acts[-1] @ p.w_out + p.b_out
        return _Tape(x, ins, zs, acts, values)

    def value(self, x):
        arr, single = self._coerce(x)
        # forward pass without retaining the tape; keeps grid sweeps lean
        cfg = self.config
        p = self.params
        beta = cfg.activation_sharpness
        h = arr
        for l, (w, b) in enumerate(zip(p.weights, p.biases), start=1):
            if l in cfg.skip_layers:
                h = np.concatenate([h, arr], axis=1) / cfg.dtype.type(_SQRT2)
            h = _softplus(h @ w.T + b, beta)
        vals = h @ p.w_out + p.b_out
        return float(vals[0]) if single else vals

    # -- spatial gradient (reverse pass over x) -------------------------------

    def spatial_grad_from_tape(self, tape: _Tape) -> np.ndarray:
        cfg = self.config
        p = self.params
        beta = cfg.activation_sharpness
        n = tape.x.shape[0]
        d = cfg.input_dim
        base_dims = cfg.layer_base_dims()
        xbar = np.zeros((n, d), dtype=cfg.dtype)
        hbar = np.broadcast_to(p.w_out, (n, cfg.hidden_width)).copy()
        for l in range(cfg.hidden_layers, 0, -1):
            zbar = hbar * _sigmoid(beta * tape.zs[l - 1])
            v = zbar @ p.weights[l - 1]
            if l in cfg.skip_layers:
                v = v / _SQRT2
                base = base_dims[l - 1]
                xbar += v[:, base:]
                hbar = v[:, :base]
            else:
                hbar = v
        xbar += hbar  # remaining adjoint is with respect to the raw input
        return xbar

    def value_and_spatial_grad(self, x):
        arr, single = self._coerce(x)
        tape = self.forward_tape(arr)
        g = self.spatial_grad_from_tape(tape)
        if single:
            return float(tape.values[0]), g[0]
        return tape.values, g

    def spatial_grad(self, x):
        return self.value_and_spatial_grad(x)[1]

    # -- parameter gradients --------------------------------------------------

    def accumulate_param_grad(
        self,
        x: np.ndarray,
        value_coeff: np.ndarray | None,
        grad_coeff: np.ndarray | None,
        tape: _Tape | None = None,
    ) -> np.ndarray:
        """Gradient over all parameters of
        sum_i [ value_coeff_i * f(x_i) + grad_coeff_i . grad_x f(x_i) ].

        value_coeff: (n,) or None for zeros; grad_coeff: (n, d) or None.
        The coefficients are treated as constants (already detached).
        """
        cfg = self.config
        p = self.params
        dt = cfg.dtype
        beta = cfg.activation_sharpness
        arr = np.asarray(x, dtype=dt)
        if arr.ndim == 1:
            arr = arr[None, :]
        n = arr.shape[0]
        if tape is None:
            tape = self.forward_tape(arr)
        width = cfg.hidden_width
        base_dims = cfg.layer_base_dims()
        has_dual = grad_coeff is not None
        a = (
            np.zeros(n, dtype=dt)
            if value_coeff is None
            else np.asarray(value_coeff, dtype=dt).reshape(n)
        )

        # dual forward pass: directional derivative of every intermediate
        # along grad_coeff, reusing the primal tape
        ind_list, zdot_list = [], []
        if has_dual:
            xdot = np.asarray(grad_coeff, dtype=dt).reshape(n, cfg.input_dim)
            hdot = xdot
            for l in range(1, cfg.hidden_layers + 1):
                if l in cfg.skip_layers:
                    ind = np.concatenate([hdot, xdot], axis=1) / dt.type(_SQRT2)
                else:
                    ind = hdot
                zdot = ind @ p.weights[l - 1].T
                hdot = _sigmoid(beta * tape.zs[l - 1]) * zdot
                ind_list.append(ind)
                zdot_list.append(zdot)
            adot_last = hdot

        # reverse pass carrying primal and dual adjoints
        grads_w = [None] * cfg.hidden_layers
        grads_b = [None] * cfg.hidden_layers
        act_last = tape.acts[-1]
        if has_dual:
            w_out_bar = act_last.T @ a + adot_last.sum(axis=0)
        else:
            w_out_bar = act_last.T @ a
        b_out_bar = a.sum()
        hbar = a[:, None] * p.w_out[None, :]
        hdotbar = np.broadcast_to(p.w_out, (n, width)).copy() if has_dual else None
        for l in range(cfg.hidden_layers, 0, -1):
            z = tape.zs[l - 1]
            sig = _sigmoid(beta * z)
            if has_dual:
                sig2 = beta * sig * (1.0 - sig)  # second derivative of softplus
                zbar = hbar * sig + hdotbar * sig2 * zdot_list[l - 1]
                zdotbar = hdotbar * sig
                grads_w[l - 1] = zbar.T @ tape.ins[l - 1] + zdotbar.T @ ind_list[l - 1]
            else:
                zbar = hbar * sig
                grads_w[l - 1] = zbar.T @ tape.ins[l - 1]
            grads_b[l - 1] = zbar.sum(axis=0)
            v = zbar @ p.weights[l - 1]
            vd = zdotbar @ p.weights[l - 1] if has_dual else None
            if l in cfg.skip_layers:
                base = base_dims[l - 1]
                hbar = v[:, :base] / _SQRT2
                if has_dual:
                    hdotbar = vd[:, :base] / _SQRT2
            else:
                hbar = v
                if has_dual:
                    hdotbar = vd

        parts = []
        for gw, gb in zip(grads_w, grads_b):
            parts.append(gw.ravel())
            parts.append(gb)
        parts.append(w_out_bar)
        parts.append(np.atleast_1d(np.asarray(b_out_bar, dtype=dt)))
        return np.concatenate(parts).astype(dt, copy=False)

    def param_grad(self, x) -> np.ndarray:
        """Exact gradient of f with respect to the flat parameter vector."""
        arr, single = self._coerce(x)
        if not single and arr.shape[0] != 1:
            raise ValueError("param_grad takes a single point; use accumulate_param_grad for batches")
        return self.accumulate_param_grad(arr, np.ones(1, dtype=self.config.dtype), None)

    def param_grad_dot(self, x, u) -> np.ndarray:
        """Exact parameter gradient of u . grad_x f at a single point; linear in u."""
        arr, single = self._coerce(x)
        if not single and arr.shape[0] != 1:
            raise ValueError("param_grad_dot takes a single point")
        u = np.asarray(u, dtype=self.config.dtype).reshape(1, self.dim)
        return self.accumulate_param_grad(arr, None, u)


# ---------------------------------------------------------------------------
# analytic fields used as test oracles


class AnalyticSdf:
    """Exact fields with closed-form gradients; no trainable parameters."""

    dim: int

    def value(self, x):
        arr = as_points(x, dim=self.dim)
        vals = self._value(arr)
        return float(vals[0]) if np.asarray(x).ndim == 1 else vals

    def spatial_grad(self, x):
        arr = as_points(x, dim=self.dim)
        g = self._grad(arr)
        return g[0] if np.asarray(x).ndim == 1 else g

    def value_and_spatial_grad(self, x):
        return self.value(x), self.spatial_grad(x)

    def param_grad(self, x):
        raise TypeError("analytic fields have no trainable parameters")

    def param_grad_dot(self, x, u):
        raise TypeError("analytic fields have no trainable parameters")

    # factories
    @staticmethod
    def sphere(center=(0.0, 0.0, 0.0), radius=0.5) -> "_Sphere":
        return _Sphere(np.asarray(center, dtype=np.float64), float(radius))

    @staticmethod
    def circle(radius=0.5) -> "_Sphere":
        return _Sphere(np.zeros(2), float(radius))

    @staticmethod
    def plane(normal=(1.0, 0.0, 0.0), offset=0.0) -> "_Plane":
        return _Plane(np.asarray(normal, dtype=np.float64), float(offset))

    @staticmethod
    def scaled_linear(direction=(1.0, 0.0, 0.0), offset=0.0, scale=1.0) -> "_ScaledLinear":
        return _ScaledLinear(np.asarray(direction, dtype=np.float64), float(offset), float(scale))

    @staticmethod
    def constant(value: float, dim: int = 3) -> "_Constant":
        return _Constant(float(value), dim)

    @staticmethod
    def box(half_sizes, center=None) -> "_Box":
        half = np.asarray(half_sizes, dtype=np.float64)
        c = np.zeros(half.shape[0]) if center is None else np.asarray(center, dtype=np.float64)
        return _Box(half, c)

    @staticmethod
    def scaled(inner: "AnalyticSdf", scale: float) -> "_Scaled":
        return _Scaled(inner, float(scale))


class _Sphere(AnalyticSdf):
    def __init__(self, center: np.ndarray, radius: float):
        self.center = center
        self.radius = check_positive(radius, "radius")
        self.dim = center.shape[0]

    def _value(self, x):
        return np.linalg.norm(x - self.center, axis=1) - self.radius

    def _grad(self, x):
        d = x - self.center
        n = np.linalg.norm(d, axis=1, keepdims=True)
        n = np.where(n == 0, 1.0, n)  # gradient undefined at the center
        return d / n

    def closest_point(self, x):
        arr = as_points(x, dim=self.dim)
        return self.center + self.radius * self._grad(arr)


class _Plane(AnalyticSdf):
    def __init__(self, normal: np.ndarray, offset: float):
        n = np.linalg.norm(normal)
        if n == 0:
            raise ValueError("plane normal must be nonzero")
        self.normal = normal / n
        self.offset = offset
        self.dim = normal.shape[0]

    def _value(self, x):
        return x @ self.normal - self.offset

    def _grad(self, x):
        return np.broadcast_to(self.normal, x.shape).copy()


class _ScaledLinear(AnalyticSdf):
    """f(x) = scale * (direction . x - offset); a non-SDF linear ramp."""

    def __init__(self, direction: np.ndarray, offset: float, scale: float):
        self.direction = direction
        self.offset = offset
        self.scale = scale
        self.dim = direction.shape[0]

    def _value(self, x):
        return self.scale * (x @ self.direction - self.offset)

    def _grad(self, x):
        return np.broadcast_to(self.scale * self.direction, x.shape).copy()


class _Constant(AnalyticSdf):
    def __init__(self, value: float, dim: int):
        self.constant = value
        self.dim = dim

    def _value(self, x):
        return np.full(x.shape[0], self.constant)

    def _grad(self, x):
        return np.zeros_like(x)


class _Box(AnalyticSdf):
    """Exact SDF of an axis-aligned box."""

    def __init__(self, half_sizes: np.ndarray, center: np.ndarray):
        if np.any(half_sizes <= 0):
            raise ValueError("box half sizes must be positive")
        self.half_sizes = half_sizes
        self.center = center
        self.dim = half_sizes.shape[0]

    def _value(self, x):
        q = np.abs(x - self.center) - self.half_sizes
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def _grad(self, x, h=1e-7):
        # central differences; the box SDF gradient has corner/edge kinks and
        # is only used in tests away from them
        g = np.zeros_like(x)
        for k in range(self.dim):
            dx = np.zeros(self.dim)
            dx[k] = h
            g[:, k] = (self._value(x + dx) - self._value(x - dx)) / (2 * h)
        return g


class _Scaled(AnalyticSdf):
    """scale * inner(x): turns an exact SDF into a non-eikonal field."""

    def __init__(self, inner: AnalyticSdf, scale: float):
        self.inner = inner
        self.scale = scale
        self.dim = inner.dim

    def _value(self, x):
        return self.scale * self.inner._value(x)

    def _grad(self, x):
        return self.scale * self.inner._grad(x)


# ---------------------------------------------------------------------------
# bounding region


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned region the field is fit over.

    After cloud normalization this is [-0.5, 0.5]^d.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo, up = self.lower_array, self.upper_array
        if lo.shape != up.shape or lo.ndim != 1:
            raise ValueError("lower and upper must be equal-length vectors")
        if not np.all(lo < up):
            raise ValueError("bounding box requires lower < upper componentwise")

    @classmethod
    def unit(cls, dim: int) -> "BoundingBox":
        return cls(tuple([-0.5] * dim), tuple([0.5] * dim))

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=np.float64)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=np.float64)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper_array - self.lower_array))

    @property
    def extents(self) -> np.ndarray:
        return self.upper_array - self.lower_array

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, self.dim))
        return self.lower_array + u * self.extents

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = as_points(points, dim=self.dim)
        lo, up = self.lower_array - tol, self.upper_array + tol
        return np.all((pts >= lo) & (pts <= up), axis=1)


# ---------------------------------------------------------------------------
# checkpoint file format


_CHECKPOINT_MAGIC = "sdfit-checkpoint"
_CHECKPOINT_VERSION = 1


def save_field_checkpoint(path, params: FieldParams, extras=None, blocks=None) -> None:
    """Write a checkpoint: text header, then little-endian float blocks.

    The header carries the full field configuration plus any caller extras
    (string values); `blocks` is an ordered mapping name -> float array
    appended after the parameter vector in the declared order. The write is
    atomic (temp file + rename).
    """
    cfg = params.config
    extras = dict(extras or {})
    blocks = dict(blocks or {})
    flat = params.to_flat().astype(cfg.dtype)
    lines = [
        f"{_CHECKPOINT_MAGIC} {_CHECKPOINT_VERSION}",
        f"input_dim={cfg.input_dim}",
        f"hidden_layers={cfg.hidden_layers}",
        f"hidden_width={cfg.hidden_width}",
        "skip_layers=" + ",".join(str(s) for s in cfg.skip_layers),
        f"activation_sharpness={cfg.activation_sharpness!r}",
        f"init_radius={cfg.init_radius!r}",
        f"precision={cfg.precision}",
        f"n_params={cfg.n_params}",
    ]
    for key, val in extras.items():
        if "=" in key or "\n" in key or "\n" in str(val):
            raise ValueError(f"invalid extra header entry {key!r}")
        lines.append(f"{key}={val}")
    # blocks keep their own precision (f4 or f8) so float64 payloads such as
    # sample banks survive a round trip bit-exactly even under float32 fields
    block_arrays = {}
    block_decls = []
    for name, arr in blocks.items():
        arr = np.asarray(arr)
        tag = "f4" if arr.dtype == np.float32 else "f8"
        block_arrays[name] = (arr, tag)
        block_decls.append(f"{name}:{arr.size}:{tag}")
    lines.append("blocks=" + ",".join(block_decls))
    lines.append("binary")
    header = ("\n".join(lines) + "\n").encode("utf-8")

    le = "<f4" if cfg.precision == 32 else "<f8"
    payload = [flat.astype(le).tobytes()]
    for arr, tag in block_arrays.values():
        payload.append(arr.ravel().astype("<" + tag).tobytes())

    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_field_checkpoint(path):
    """Read a checkpoint; returns (params, extras, blocks)."""
    with open(os.fspath(path), "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\nbinary\n")
    if nl < 0:
        raise ValueError("not a field checkpoint: missing binary marker")
    header_lines = raw[:nl].decode("utf-8").splitlines()
    body = raw[nl + len(b"\nbinary\n") :]
    magic = header_lines[0].split()
    if magic[0] != _CHECKPOINT_MAGIC:
        raise ValueError("not a field checkpoint: bad magic")
    if int(magic[1]) > _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {magic[1]}")
    kv = {}
    for line in header_lines[1:]:
        key, _, val = line.partition("=")
        kv[key] = val

    skip = tuple(int(s) for s in kv["skip_layers"].split(",") if s != "")
    cfg = FieldConfig(
        input_dim=int(kv.pop("input_dim")),
        hidden_layers=int(kv.pop("hidden_layers")),
        hidden_width=int(kv.pop("hidden_width")),
        skip_layers=skip,
        activation_sharpness=float(kv.pop("activation_sharpness")),
        init_radius=float(kv.pop("init_radius")),
        precision=int(kv.pop("precision")),
    )
    kv.pop("skip_layers")
    n_params = int(kv.pop("n_params"))
    if n_params != cfg.n_params:
        raise ValueError("checkpoint parameter count does not match its configuration")
    block_spec = []
    for item in kv.pop("blocks").split(","):
        if item:
            parts = item.split(":")
            name, size = parts[0], int(parts[1])
            tag = parts[2] if len(parts) > 2 else ("f4" if cfg.precision == 32 else "f8")
            block_spec.append((name, size, np.dtype("<" + tag)))

    le = np.dtype("<f4" if cfg.precision == 32 else "<f8")
    expected = n_params * le.itemsize + sum(s * dt.itemsize for _, s, dt in block_spec)
    if len(body) != expected:
        raise ValueError(f"checkpoint payload is {len(body)} bytes, expected {expected}")
    flat = np.frombuffer(body, dtype=le, count=n_params).astype(cfg.dtype)
    params = FieldParams.from_flat(cfg, flat)
    blocks = {}
    pos = n_params * le.itemsize
    for name, size, dt in block_spec:
        native = np.float32 if dt.itemsize == 4 else np.float64
        blocks[name] = np.frombuffer(body, dtype=dt, count=size, offset=pos).astype(native)
        pos += size * dt.itemsize
    return params, kv, blocks
