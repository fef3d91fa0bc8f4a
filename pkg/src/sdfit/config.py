"""Run configuration: one INI file covering every knob.

Sections mirror the library layers — ``[field]``, ``[sampling]``,
``[loss]``, ``[train]``, ``[io]`` — and every key has the library
default, so an empty file is a valid configuration.  Unknown sections
or keys are rejected.  Serialization is lossless: floats are written
with 17 significant digits, and ``read(write(cfg)) == cfg`` exactly.

``[loss]`` accepts the conventional short aliases ``lambda`` (eikonal
weight), ``mu`` (smoothed-area weight), and ``alpha`` (indicator
sharpness); the echoed canonical form always uses the long names.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace

from .fields import FieldConfig
from .losses import VARIANTS, LossConfig
from .sampling import SamplingConfig
from .training import TrainConfig

__all__ = [
    "RunConfig",
    "default_run_config",
    "load_run_config",
    "parse_run_config",
    "apply_overrides",
    "config_to_ini",
    "write_run_config",
]


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs: nested configs plus io paths."""

    field: FieldConfig
    sampling: SamplingConfig
    train: TrainConfig
    input_path: str = ""
    out_dir: str = "out"

    @property
    def loss(self) -> LossConfig:
        return self.train.loss


_LOSS_ALIASES = {"lambda": "eikonal_weight", "mu": "ssa_weight", "alpha": "ssa_sharpness"}

# section -> key -> parser
_SCHEMA: dict[str, dict] = {
    "field": {
        "input_dim": int,
        "hidden_layers": int,
        "hidden_width": int,
        "skip_layers": "int_tuple",
        "activation_sharpness": float,
        "init_radius": float,
        "precision": int,
    },
    "sampling": {
        "bank_refresh_every": int,
        "bank_size": int,
        "descent_steps": int,
        "accept_tol": float,
        "train_mc_resolution": int,
        "local_knn_k": int,
        "local_std_scale": float,
        "n_global": int,
        "batch_surface": int,
        "batch_cloud": int,
    },
    "loss": {
        "variant": str,
        "eikonal_weight": float,
        "ssa_weight": float,
        "ssa_sharpness": float,
    },
    "train": {
        "iterations": int,
        "base_lr": float,
        "warmup_iters": int,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
        "seed": int,
        "log_every": int,
        "checkpoint_every": int,
    },
    "io": {
        "input": str,
        "out_dir": str,
    },
}


def _parse_value(section: str, key: str, raw: str):
    kind = _SCHEMA[section][key]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "int_tuple":
            return tuple(int(p) for p in raw.split(",") if p.strip() != "")
    except ValueError as exc:
        raise ValueError(f"bad value for {section}.{key}: {raw!r}") from exc
    if section == "loss" and key == "variant" and raw not in VARIANTS:
        raise ValueError(f"bad value for loss.variant: {raw!r}; expected one of {VARIANTS}")
    return raw


def _canonical_key(section: str, key: str) -> str:
    if section == "loss":
        key = _LOSS_ALIASES.get(key, key)
    if section not in _SCHEMA:
        raise ValueError(f"unknown config section [{section}]")
    if key not in _SCHEMA[section]:
        raise ValueError(f"unknown config key {section}.{key}")
    return key


def default_run_config() -> RunConfig:
    return RunConfig(field=FieldConfig(), sampling=SamplingConfig(), train=TrainConfig())


def _build(values: dict[str, dict]) -> RunConfig:
    field = FieldConfig(**values["field"])
    sampling = SamplingConfig(**values["sampling"])
    loss = LossConfig(**values["loss"])
    train = TrainConfig(loss=loss, **values["train"])
    return RunConfig(
        field=field,
        sampling=sampling,
        train=train,
        input_path=values["io"].get("input", ""),
        out_dir=values["io"].get("out_dir", "out"),
    )


def _decompose(cfg: RunConfig) -> dict[str, dict]:
    return {
        "field": {k: getattr(cfg.field, k) for k in _SCHEMA["field"]},
        "sampling": {k: getattr(cfg.sampling, k) for k in _SCHEMA["sampling"]},
        "loss": {k: getattr(cfg.loss, k) for k in _SCHEMA["loss"]},
        "train": {k: getattr(cfg.train, k) for k in _SCHEMA["train"]},
        "io": {"input": cfg.input_path, "out_dir": cfg.out_dir},
    }


def parse_run_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse INI text on top of ``base`` (library defaults when None)."""
    base = base if base is not None else default_run_config()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValueError(f"malformed config: {exc}") from exc
    values = _decompose(base)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            canon = _canonical_key(section, key)
            values[section][canon] = _parse_value(section, canon, raw)
    return _build(values)


def load_run_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_run_config(fh.read(), base)


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` strings (the --set flag) in order."""
    values = _decompose(cfg)
    for item in overrides:
        key_part, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        section, dot, key = key_part.strip().partition(".")
        if not dot:
            raise ValueError(f"override key {key_part!r} is not of the form section.key")
        section = section.strip()
        if section not in _SCHEMA:
            raise ValueError(f"unknown config section [{section}]")
        canon = _canonical_key(section, key.strip())
        values[section][canon] = _parse_value(section, canon, raw)
    return _build(values)


def _format_value(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def config_to_ini(cfg: RunConfig) -> str:
    """Canonical lossless INI text (the effective-config echo)."""
    out = io.StringIO()
    values = _decompose(cfg)
    for section in _SCHEMA:
        out.write(f"[{section}]\n")
        for key in _SCHEMA[section]:
            out.write(f"{key} = {_format_value(values[section][key])}\n")
        out.write("\n")
    return out.getvalue()


def write_run_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config_to_ini(cfg))


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Route the single CLI seed into the training config."""
    return replace(cfg, train=replace(cfg.train, seed=int(seed)))


def with_out_dir(cfg: RunConfig, out_dir: str) -> RunConfig:
    return replace(cfg, out_dir=out_dir)
