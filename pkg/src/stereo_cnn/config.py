"""Flat ``key = value`` configuration shared by all commands.

Blank lines and ``#`` comments are ignored. Every key must be known; values
are parsed to the type of the key's default and then checked by building
the component parameter objects.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Union

from .dataset import SamplingParams
from .neuralnet import Architecture, TrainSchedule
from .pipeline import PipelineConfig


@dataclass(frozen=True)
class Settings:
    # stereo method
    d_max: int = 228
    backend: str = "cnn"
    sad_window: int = 5
    eta: int = 4
    tau: float = 0.0442
    cbca_iterations: int = 4
    pi1: float = 1.0
    pi2: float = 32.0
    tau_so: float = 0.0625
    blur_sigma: float = 5.656
    tau_bf: float = 5.0
    median_window: int = 5
    bf_window: int = 11
    intensity_scale: float = 255.0
    # dataset
    n: int = 9
    n_lo: int = 4
    n_hi: int = 8
    p_hi: int = 1
    # network
    conv_size: int = 5
    n_kernels: int = 32
    feat_width: int = 200
    fc_width: int = 300
    fc_layers: int = 4
    # training
    batch_size: int = 128
    epochs: int = 16
    lr: float = 0.01
    decay_epochs: tuple = (12, 15)
    decay: float = 0.1
    held_out: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.held_out < 1:
            raise ValueError("held_out must lie in [0, 1)")
        self.pipeline()
        self.sampling()
        self.architecture()
        self.schedule()

    def pipeline(self) -> PipelineConfig:
        return _project(PipelineConfig, self)

    def sampling(self) -> SamplingParams:
        return _project(SamplingParams, self)

    def architecture(self) -> Architecture:
        return Architecture(self.n, self.conv_size, self.n_kernels, self.feat_width, self.fc_width, self.fc_layers)

    def schedule(self) -> TrainSchedule:
        return _project(TrainSchedule, self)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _project(cls, settings: Settings):
    return cls(**{f.name: getattr(settings, f.name) for f in fields(cls)})


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


_TYPES = {f.name: type(f.default) for f in fields(Settings)}


def parse_value(key: str, text: str):
    if key not in _TYPES:
        raise KeyError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ValueError(f"bad value for {key}: {text!r}") from exc


def parse_config(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = parse_value(key, value)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{source}:{lineno}: {exc.args[0]}") from exc
    return values


def load_settings(path: Union[str, Path, None] = None, overrides: dict | None = None) -> Settings:
    """Defaults, then the file, then ``overrides`` (entries set to None are skipped)."""
    values = {}
    if path is not None:
        values.update(parse_config(Path(path).read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _TYPES:
            raise KeyError(f"unknown config key {key!r}")
        values[key] = value
    return replace(Settings(), **values)
