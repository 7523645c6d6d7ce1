"""Run configuration: INI-style file with [model], [train], [data] and [run] sections.

Hyperparameter keys use the names of the reference hyperparameter table
(learning_rate, weight_decay, epochs, kernel_dim, reset_timestep, layers,
dropout, model_dim); every key can also be set from the command line.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import VARIANTS, ModelConfig
from .training import TrainConfig

TASKS = ("scifar", "smnist", "smnist256", "synth-delayed", "synth-adding")
PRECISIONS = ("float64", "float32")

SECTIONS = {
    "model": ("variant", "layers", "model_dim", "kernel_dim", "dropout", "reset_timestep",
              "theta", "fr_mode"),
    "train": ("learning_rate", "weight_decay", "epochs", "batch_size", "checkpoint_every"),
    "data": ("task", "data_root", "seq_len", "n_train", "n_test", "n_classes"),
    "run": ("seed", "out_dir", "precision"),
}


@dataclass
class RunConfig:
    # model
    variant: str = "pssm"
    layers: int = 6
    model_dim: int = 512
    kernel_dim: int = 64
    dropout: float = 0.1
    reset_timestep: int = 5
    theta: float | None = None
    fr_mode: str = "mask"
    # train
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    epochs: int = 200
    batch_size: int = 32
    checkpoint_every: int = 0
    # data
    task: str = "scifar"
    data_root: str | None = None
    seq_len: int = 256  # synthetic tasks only
    n_train: int = 1000  # synthetic tasks only
    n_test: int = 500  # synthetic tasks only
    n_classes: int | None = None  # synthetic tasks only
    # run
    seed: int = 0
    out_dir: str = "runs/default"
    precision: str = "float64"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.learning_rate < 0 or self.weight_decay < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate, weight_decay, epochs must be >= 0 and batch_size >= 1")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def model_config(self, d_input: int, n_classes: int) -> ModelConfig:
        return ModelConfig(
            n_layers=self.layers, d_model=self.model_dim, d_state=self.kernel_dim,
            dropout=self.dropout, variant=self.variant, refractory=self.reset_timestep,
            theta=self.theta, n_classes=n_classes, d_input=d_input, fr_mode=self.fr_mode,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.learning_rate, weight_decay=self.weight_decay,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           checkpoint_every=self.checkpoint_every)

    def replace(self, **overrides) -> "RunConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return RunConfig(**{**asdict(self), **overrides})


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str, where: str):
    kind = _TYPES[key]
    if "None" in kind and raw.strip().lower() in ("", "none"):
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: key {key!r} expects {kind.split(' ')[0]}, got {raw!r}") from None
    return raw.strip()


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if line.split("=", 1)[0].strip() == key:
            return i
    return None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        raise ConfigError(f"{source}:{lineno}: cannot parse {line!r}") from None
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            where = f"{source}:{_line_of(text, key)}"
            if key not in SECTIONS[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in section [{section}]")
            values[key] = _coerce(key, raw, where)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    d = asdict(cfg)
    for section, keys in SECTIONS.items():
        cp[section] = {k: "none" if d[k] is None else repr(d[k]) if isinstance(d[k], float) else str(d[k])
                       for k in keys}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
