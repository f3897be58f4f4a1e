"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .model import ModelConfig
from .postprocess import ANET_THRESHOLDS, THUMOS_THRESHOLDS
from .training import TrainConfig


class ConfigError(ValueError):
    pass


# keys that do not affect results and are left out of the config hash
_UNHASHED = {"jobs", "data_dir", "checkpoint", "results"}


@dataclass(frozen=True)
class RunConfig:
    # synthetic data
    seed: int = 0
    n_videos: int = 20
    l_s: int = 128
    d_i: int = 8
    instances_min: int = 1
    instances_max: int = 2
    min_duration: int = 3
    max_duration: int = 12
    noise: float = 0.1
    # windows
    window_mode: str = "sliding"
    stride: int = 0  # 0 means l_w // 2
    val_fraction: float = 0.2
    # network
    l_w: int = 32
    d_max: int = 0  # 0 means l_w - 1
    n_samples: int = 16
    d_b: int = 32
    d_g: int = 32
    d_c: int = 32
    kernel: int = 3
    directed: bool = True
    edge_update: bool = True
    gcn_baseline: bool = False
    # optimization
    learning_rate: float = 1e-4
    weight_decay: float = 0.005
    max_epochs: int = 20
    patience: int = 5
    # post-processing / evaluation
    nms_sigma: float = 0.5
    nms_floor: float = 0.001
    top_k: int = 100
    thresholds: str = "anet"
    jobs: int = 1
    # paths
    data_dir: str = ""
    checkpoint: str = ""
    results: str = ""

    def __post_init__(self):
        if self.n_videos < 1:
            raise ConfigError(f"n_videos must be >= 1, got {self.n_videos}")
        if self.window_mode not in ("sliding", "rescale"):
            raise ConfigError(f"window_mode must be 'sliding' or 'rescale', got {self.window_mode!r}")
        if self.thresholds not in ("anet", "thumos"):
            raise ConfigError(f"thresholds must be 'anet' or 'thumos', got {self.thresholds!r}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.stride < 0 or self.stride > self.l_w:
            raise ConfigError(f"stride must be in [0, l_w], got {self.stride}")
        if self.nms_sigma <= 0 or self.top_k < 1 or self.jobs < 1:
            raise ConfigError("nms_sigma, top_k and jobs must be positive")
        try:
            self.model_config().validate()
            self.train_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def window_stride(self) -> int:
        return self.stride or max(1, self.l_w // 2)

    @property
    def tiou_thresholds(self) -> tuple[float, ...]:
        return ANET_THRESHOLDS if self.thresholds == "anet" else THUMOS_THRESHOLDS

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_i=self.d_i,
            d_b=self.d_b,
            d_g=self.d_g,
            d_c=self.d_c,
            l_w=self.l_w,
            d_max=self.d_max,
            n_samples=self.n_samples,
            kernel=self.kernel,
            directed=self.directed,
            edge_update=self.edge_update,
            gcn_baseline=self.gcn_baseline,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())

    def config_hash(self) -> str:
        text = "".join(f"{k}={_format(v)};" for k, v in self.to_dict().items() if k not in _UNHASHED)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return replace(self, **_coerce_all(overrides))

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in raw:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            raw[key] = value
        return cls(**_coerce_all(raw))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.loads(Path(path).read_text())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(key: str, value: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None


def _coerce_all(raw: dict[str, str]) -> dict:
    return {k: _coerce(k, v) if isinstance(v, str) else v for k, v in raw.items()}


def parse_assignments(text: str) -> dict[str, str]:
    """``"a=1,b=true"`` -> ``{"a": "1", "b": "true"}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


ABLATION_KEYS = ("directed", "edge_update", "gcn_baseline")
