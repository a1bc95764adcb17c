"""Experiment configuration: INI-style sections with typed defaults and overrides."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .attacks import AttackConfig
from .fedavg import ClientConfig
from .models import ModelSpec

__all__ = ["DataConfig", "RunConfig", "ExperimentConfig", "load_config", "apply_overrides",
           "ConfigError", "dump_config"]


class ConfigError(ValueError):
    """Unknown section or key, or a value of the wrong type."""


@dataclass(frozen=True)
class DataConfig:
    kind: str = "striped-patterns"      # striped-patterns | gaussian-blobs | idx
    n: int = 10
    channels: int = 1
    height: int = 8
    width: int = 8
    classes: int = 10
    idx_images: str = ""
    idx_labels: str = ""

    @property
    def shape(self):
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "mlp"
    hidden: tuple = (128,)
    conv_channels: tuple = (4, 8)
    kernel: int = 3
    fc_hidden: int = 32
    activation: str = "relu"


@dataclass(frozen=True)
class ClientGrid:
    """Client protocol; ``epochs`` and ``batch_size`` accept lists, one setting per pair."""

    epochs: tuple = (20,)
    batch_size: tuple = (10,)
    lr: float = 0.1
    shuffle: bool = True


@dataclass(frozen=True)
class RunConfig:
    methods: tuple = ("ig", "sme", "sim")
    repeats: int = 2
    master_seed: int = 0
    seed: int = 0                 # repeat index used by single-task subcommands
    workers: int = 1
    output_dir: str = "runs"
    record_steps: bool = True
    labels: str = "true"          # true | recover
    dump_images: bool = True


@dataclass(frozen=True)
class FlowConfig:
    a1: float = 1.0
    a2: float = 10.0
    w0: tuple = (1.0, 1.0)
    duration: float = 1.0
    etas: tuple = (1e-2, 1e-3, 1e-4)
    resolution: int = 1001


@dataclass(frozen=True)
class DiagnoseConfig:
    resolution: int = 101
    loss_floor: float = 0.0
    slack: float = 1e-2


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    client: ClientGrid = field(default_factory=ClientGrid)
    attack: AttackConfig = field(default_factory=AttackConfig)
    run: RunConfig = field(default_factory=RunConfig)
    flow2d: FlowConfig = field(default_factory=FlowConfig)
    diagnose: DiagnoseConfig = field(default_factory=DiagnoseConfig)

    def model_spec(self):
        m = self.model
        return ModelSpec(kind=m.kind, input_shape=self.data.shape, classes=self.data.classes,
                         hidden=tuple(m.hidden), conv_channels=tuple(m.conv_channels),
                         kernel=m.kernel, fc_hidden=m.fc_hidden, activation=m.activation)

    def settings(self):
        """(epochs, batch_size) pairs; lists of equal length zip, a singleton broadcasts."""
        es, bs = list(self.client.epochs), list(self.client.batch_size)
        if len(es) == 1:
            es = es * len(bs)
        if len(bs) == 1:
            bs = bs * len(es)
        if len(es) != len(bs):
            raise ConfigError("client.epochs and client.batch_size lists differ in length")
        return list(zip(es, bs))

    def client_config(self, epochs, batch_size, seed):
        return ClientConfig(epochs=int(epochs), batch_size=int(batch_size), lr=self.client.lr,
                            seed=int(seed), shuffle=self.client.shuffle)


def _parse(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(_parse(x, kind(), where) if kind is not str else x for x in items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _set(cfg, section, key, raw):
    if section not in {f.name for f in fields(ExperimentConfig)}:
        raise ConfigError(f"unknown section [{section}]")
    sub = getattr(cfg, section)
    names = {f.name for f in fields(sub)}
    if key not in names:
        raise ConfigError(f"unknown key {section}.{key}")
    value = _parse(raw, getattr(sub, key), f"{section}.{key}")
    try:
        return replace(cfg, **{section: replace(sub, **{key: value})})
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


def load_config(path=None, text=None):
    """Defaults, then the file (or ``text``) on top."""
    cfg = ExperimentConfig()
    if path is None and text is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    if text is not None:
        parser.read_string(text)
    else:
        with open(path) as fh:
            parser.read_file(fh)
    for section in parser.sections():
        for key, raw in parser.items(section):
            cfg = _set(cfg, section, key, raw)
    return cfg


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` strings."""
    for item in overrides or ():
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        cfg = _set(cfg, section, key, raw)
    return cfg


def _fmt(v):
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg):
    """Round-trippable text form, written next to every run's outputs."""
    lines = []
    for sec in fields(cfg):
        sub = getattr(cfg, sec.name)
        lines.append(f"[{sec.name}]")
        lines.extend(f"{f.name} = {_fmt(getattr(sub, f.name))}" for f in fields(sub))
        lines.append("")
    return "\n".join(lines)
