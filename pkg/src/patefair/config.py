"""Experiment configuration: one flat key/value mapping, loadable from YAML and
overridable per key from the command line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

LABEL_MODES = ("hard", "soft-clamped", "soft-raw")
SWEEP_KEYS = ("teachers", "sigma", "lam", "label_mode")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of a run.

    The four sweep keys (``teachers``, ``sigma``, ``lam``, ``label_mode``)
    hold lists; a single run uses lists of length one. ``sigma = 0`` means
    the noisy labels are replaced by the clean ones (no privacy).
    """

    seed: int = 0
    # data source: a CSV file, or the synthetic generator when csv_path is empty
    csv_path: str = ""
    label_column: str = "label"
    group_column: str = "group"
    include_group_feature: bool = False
    standardize: bool = True
    synth_n: int = 1000
    synth_d: int = 10
    synth_class_count: int = 2
    synth_group_fractions: tuple[float, ...] = (0.75, 0.25)
    synth_norm_scales: tuple[float, ...] = (1.0, 3.0)
    synth_label_noise: float = 0.0
    synth_class_sep: float = 2.0
    synth_seed: int = -1
    private_fraction: float = 0.75
    public_train_count: int = 200
    # ensemble and mechanism
    teachers: tuple[int, ...] = (20,)
    sigma: tuple[float, ...] = (10.0,)
    lam: tuple[float, ...] = (10.0,)
    label_mode: tuple[str, ...] = ("hard",)
    delta: float = 1e-5
    # models
    teacher_arch: str = "logistic"
    student_arch: str = "logistic"
    hidden: tuple[int, ...] = (16, 16)
    teacher_lam: float = 0.01
    teacher_learning_rate: float = 0.05
    teacher_batch_size: int = 32
    teacher_epochs: int = 100
    learning_rate: float = 0.005
    batch_size: int = 32
    epochs: int = 500
    # audit
    repetitions: int = 100
    flip_trials: int = 10000
    permutations: int = 2000
    output_dir: str = "runs"

    def __post_init__(self) -> None:
        for key in SWEEP_KEYS:
            val = getattr(self, key)
            if not isinstance(val, tuple):
                object.__setattr__(self, key, tuple(val) if isinstance(val, (list, tuple)) else (val,))
            if not getattr(self, key):
                raise ConfigError(f"{key} must be a nonempty list")
        for mode in self.label_mode:
            if mode not in LABEL_MODES:
                raise ConfigError(f"unknown label_mode {mode!r}; expected one of {LABEL_MODES}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if any(s < 0 for s in self.sigma):
            raise ConfigError("sigma must be nonnegative (0 disables noise)")
        if any(k < 1 for k in self.teachers):
            raise ConfigError("teachers must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must be in (0, 1)")

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()


def _element_caster(name: str):
    default = getattr(_DEFAULTS, name)
    sample = default[0] if isinstance(default, tuple) and default else default
    if isinstance(sample, bool):
        return _parse_bool
    if isinstance(sample, int):
        return int
    if isinstance(sample, float):
        return float
    return str


def _parse_bool(v: Any) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def coerce(name: str, value: Any) -> Any:
    """Convert a YAML or command-line value to the type of field ``name``."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    cast = _element_caster(name)
    is_list = isinstance(getattr(_DEFAULTS, name), tuple)
    try:
        if is_list:
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            elif not isinstance(value, (list, tuple)):
                value = [value]
            return tuple(cast(v.strip() if isinstance(v, str) else v) for v in value)
        if cast is float and isinstance(value, int):
            return float(value)
        return cast(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r} ({exc})") from None


def from_mapping(data: dict[str, Any], base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    return base.replace(**{k: coerce(k, v) for k, v in data.items()})


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path:
        with Path(path).open(encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a key/value mapping")
        data.update(loaded)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return from_mapping(data)


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def field_names() -> list[str]:
    return [f.name for f in fields(ExperimentConfig)]


def desk_profile(**changes) -> ExperimentConfig:
    """Small synthetic profile that runs in seconds per point."""
    return ExperimentConfig().replace(**changes)


def uci_profile(csv_path: str, label_column: str, group_column: str, **changes) -> ExperimentConfig:
    """Settings of the UCI experiments (two-hidden-layer networks, k=150, sigma=50, lambda=100)."""
    base = ExperimentConfig(
        csv_path=csv_path,
        label_column=label_column,
        group_column=group_column,
        teachers=(150,),
        sigma=(50.0,),
        lam=(100.0,),
        teacher_arch="mlp2",
        student_arch="mlp2",
        learning_rate=1e-4,
        teacher_learning_rate=1e-4,
        batch_size=32,
        teacher_batch_size=32,
        repetitions=100,
    )
    return base.replace(**changes)


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "LABEL_MODES",
    "SWEEP_KEYS",
    "coerce",
    "desk_profile",
    "dump_config",
    "field_names",
    "from_mapping",
    "load_config",
    "uci_profile",
]
