"""Training configuration and its flat TOML representation."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli

from .errors import ConfigError


@dataclass
class TrainConfig:
    seed: int = 0
    sh_degree: int = 0
    background: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    # iteration budgets (desk scale; base : per-stage = 5 : 4)
    mask_iterations: int = 500
    joint_iterations: int = 2000
    stage_iterations: int = 1600

    # loss
    lambda_ssim: float = 0.2
    weight_bce: float = 1.0
    mask_threshold: float = 0.5

    # learning rates
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    spatial_lr_scale: float = 0.0  # 0 -> camera extent of the scene
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 0.05
    lr_color: float = 2.5e-3
    lr_dyn_logit: float = 0.05
    lr_hash: float = 1e-2
    lr_decoder: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15

    # 4D hash grid / decoder
    hash_levels: int = 8
    hash_features: int = 2
    hash_table_size: int = 2**15
    hash_base_resolution: int = 8
    hash_growth: float = 1.5
    hash_init_range: float = 1e-4
    decoder_hidden: list = field(default_factory=lambda: [64, 64])
    deformation: bool = True
    stop_mu_grad: bool = False
    train_dyn_logit_joint: bool = False

    # density control
    densify: bool = False
    densify_from: int = 100
    densify_until: int = 1500
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    prune_opacity: float = 0.005

    # progressive shifting
    lateral_step: float = 1.0
    num_stages: int = 1
    refiner: str = "identity"
    cumulative_extra: bool = True
    splat_radius: float = 1.0

    # io / runtime
    snapshot_every: int = 0
    checkpoint_every: int = 0
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        for f in fields(self):
            if f.name.startswith("lr_") and f.name != "lr_position_final":
                if not getattr(self, f.name) > 0:
                    raise ConfigError(f"{f.name} must be > 0")
        for name in ("mask_iterations", "joint_iterations", "stage_iterations"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.lambda_ssim <= 1:
            raise ConfigError("lambda_ssim must lie in [0, 1]")
        if not 0 < self.mask_threshold < 1:
            raise ConfigError("mask_threshold must lie in (0, 1)")
        if not 0 <= self.sh_degree <= 3:
            raise ConfigError("sh_degree must be 0..3")
        if len(self.background) != 3:
            raise ConfigError("background needs three components")
        if self.lateral_step <= 0 or self.num_stages < 1:
            raise ConfigError("lateral_step must be > 0 and num_stages >= 1")

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **overrides):
        return from_dict({**self.to_dict(), **overrides})

    def to_toml(self):
        lines = []
        for k, v in self.to_dict().items():
            lines.append(f"{k} = {_toml_value(v)}")
        return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def _coerce(name, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        try:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a number, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = json.loads(value)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        kind = type(default[0]) if default else float
        return [kind(x) for x in value]
    return str(value)


def from_dict(values: dict) -> TrainConfig:
    defaults = TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    for k, v in values.items():
        if k not in known:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(v, dict):
            raise ConfigError(f"{k}: nested tables are not allowed (flat key = value only)")
        kwargs[k] = _coerce(k, v, getattr(defaults, k))
    return TrainConfig(**kwargs)


def load_config(path=None, overrides=None) -> TrainConfig:
    """Read a flat TOML file; ``overrides`` (mapping or ``key=value`` strings) win."""
    values = {}
    if path is not None:
        try:
            values = tomli.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    for item in overrides or ():
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            k, v = k.strip(), v.strip()
            try:
                v = tomli.loads(f"x = {v}")["x"]
            except tomli.TOMLDecodeError:
                pass
            values[k] = v
        else:
            values.update(item)
    return from_dict(values)
