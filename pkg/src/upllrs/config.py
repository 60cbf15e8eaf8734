"""Run configuration: flat ``key = value`` files with ``data.``/``rs.``/``train.`` prefixes."""
from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .separation import SeparationConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str = ""
    label_column: str = "label"
    n: int = 6000
    classes: int = 10
    dim: int = 16
    separation: float = 10.0
    mu: float = 0.3
    eta: float = 0.1

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.path:
            raise ConfigError("data.path is required for csv sources")
        if not 0 <= self.mu < 1 or not 0 <= self.eta < 1:
            raise ConfigError("data.mu and data.eta must be in [0, 1)")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    rs: SeparationConfig = field(default_factory=SeparationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    no_rs: bool = False
    no_unreliable: bool = False

    def __post_init__(self):
        # one seed drives every stage
        self.rs.seed = self.seed
        self.train.seed = self.seed

    # --- flat form -----------------------------------------------------
    def to_flat(self) -> dict[str, str]:
        flat = {"seed": str(self.seed), "output_dir": self.output_dir,
                "train.no_rs": _fmt(self.no_rs), "train.no_unreliable": _fmt(self.no_unreliable)}
        for prefix, obj in (("data", self.data), ("rs", self.rs), ("train", self.train)):
            for f in dataclasses.fields(obj):
                if f.name == "seed":
                    continue
                flat[f"{prefix}.{f.name}"] = _fmt(getattr(obj, f.name))
        return dict(sorted(flat.items()))

    @classmethod
    def from_flat(cls, values: dict[str, str]) -> "RunConfig":
        known = cls().to_flat()
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = {**known, **values}
        sections: dict[str, dict] = {"data": {}, "rs": {}, "train": {}}
        for key, raw in merged.items():
            if "." in key:
                prefix, name = key.split(".", 1)
                sections[prefix][name] = raw
        kw = {
            "seed": _parse(int, merged["seed"], "seed"),
            "output_dir": merged["output_dir"],
            "no_rs": _parse(bool, sections["train"].pop("no_rs"), "train.no_rs"),
            "no_unreliable": _parse(bool, sections["train"].pop("no_unreliable"), "train.no_unreliable"),
        }
        try:
            kw["data"] = _build(DataConfig, sections["data"], "data")
            kw["rs"] = _build(SeparationConfig, sections["rs"], "rs")
            kw["train"] = _build(TrainConfig, sections["train"], "train")
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kw)

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        return RunConfig.from_flat({**self.to_flat(), **overrides})

    def digest(self, prefixes=("data.", "rs.")) -> str:
        flat = self.to_flat()
        text = "\n".join(f"{k}={v}" for k, v in flat.items() if k.startswith(prefixes))
        return hashlib.sha256(text.encode()).hexdigest()[:8]

    def run_dir(self) -> Path:
        """Dataset + separation identity: ``<output_dir>/<hash>-s<seed>``."""
        return Path(self.output_dir) / f"{self.digest()}-s{self.seed}"

    def train_dir(self) -> Path:
        name = f"train-{self.train.mode}"
        if self.no_rs:
            name += "-no-rs"
        if self.no_unreliable:
            name += "-no-unreliable"
        return self.run_dir() / f"{name}-{self.digest(('train.',))[:6]}"

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_flat().items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _parse(tp, raw: str, key: str):
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if origin in (typing.Union, types.UnionType):
            if raw.lower() in ("none", ""):
                return None
            inner = [a for a in args if a is not type(None)][0]
            return _parse(inner, raw, key)
        if tp is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if origin is tuple:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def _build(cls, raw: dict[str, str], prefix: str):
    hints = typing.get_type_hints(cls)
    kwargs = {name: _parse(hints[name], value, f"{prefix}.{name}") for name, value in raw.items()}
    return cls(**kwargs)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    values = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_flat(parse_config_text(text, str(path)))
