"""Experiment configuration shared by the protocol and the CLI.

A config is a flat dataclass that serializes to the same ``key = value``
lines the CLI accepts in a config file and the report echoes back, so a
parsed config round-trips exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

ENV_DATA_DIR = "CLARE_DATA_DIR"

# Architecture presets per dataset; explicit hidden sizes override them.
_MNIST_HIDDEN = (512, 256)
_TOY_HIDDEN = (48, 32)


@dataclass
class ExperimentConfig:
    """Everything a run needs apart from the data itself.

    ``epochs`` and the hidden widths default to ``None`` meaning "pick per
    dataset"; ``resolved()`` fills them in. ``seed`` is the master seed;
    per-phase seeds are derived from it, never used directly.
    """

    dataset: str = "mnist"
    g: int = 1
    epochs: int | None = None
    batch_size: int = 128
    lr: float = 1e-3
    optimizer: str = "adam"
    d_z: int = 64
    beta: float = 1.0
    replay: bool = True
    start: str = "scratch"
    seed: int = 0
    data_dir: str = ""
    out_path: str = ""
    toy_classes: int = 3
    toy_per_class: int = 200
    toy_dim: int = 16
    toy_spread: float = 0.05
    enc_hidden: tuple[int, int] | None = None
    dec_hidden: tuple[int, int] | None = None

    def validate(self) -> None:
        if self.dataset not in ("mnist", "toy"):
            raise ValueError(f"dataset must be 'mnist' or 'toy', got {self.dataset!r}")
        if self.g < 1:
            raise ValueError(f"g must be >= 1, got {self.g}")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.d_z < 1:
            raise ValueError(f"latent dim must be >= 1, got {self.d_z}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.start not in ("scratch", "warm"):
            raise ValueError(f"start must be 'scratch' or 'warm', got {self.start!r}")
        if self.toy_classes < 1 or self.toy_per_class < 1 or self.toy_dim < 1:
            raise ValueError("toy dataset parameters must be positive")
        if self.toy_spread < 0:
            raise ValueError(f"toy spread must be non-negative, got {self.toy_spread}")

    def resolved(self) -> "ExperimentConfig":
        """Copy with dataset-dependent defaults filled in."""
        out = replace(self)
        if out.epochs is None:
            out.epochs = 15 if out.dataset == "mnist" else 30
        if out.enc_hidden is None:
            out.enc_hidden = _MNIST_HIDDEN if out.dataset == "mnist" else _TOY_HIDDEN
        if out.dec_hidden is None:
            out.dec_hidden = tuple(reversed(out.enc_hidden))
        if not out.data_dir:
            out.data_dir = os.environ.get(ENV_DATA_DIR, "")
        out.validate()
        return out

    def input_dim(self) -> int:
        return 784 if self.dataset == "mnist" else self.toy_dim

    # -- key/value round trip ------------------------------------------------

    def to_items(self) -> list[tuple[str, str]]:
        out: list[tuple[str, str]] = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                text = ""
            elif isinstance(value, bool):
                text = "on" if value else "off"
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            out.append((f.name, text))
        return out


def config_from_items(items: dict[str, str]) -> ExperimentConfig:
    """Build a config from ``key = value`` strings; inverse of ``to_items``."""
    kwargs = {}
    names = {f.name: f for f in fields(ExperimentConfig)}
    for key, raw in items.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r}")
        kwargs[key] = _parse_field(key, raw)
    return ExperimentConfig(**kwargs)


def _parse_field(name: str, raw: str):
    raw = raw.strip()
    if name in ("dataset", "optimizer", "start", "data_dir", "out_path"):
        return raw
    if name == "replay":
        if raw not in ("on", "off"):
            raise ValueError(f"replay must be 'on' or 'off', got {raw!r}")
        return raw == "on"
    if name in ("lr", "beta", "toy_spread"):
        return float(raw)
    if name in ("enc_hidden", "dec_hidden"):
        if not raw:
            return None
        parts = tuple(int(p) for p in raw.split(","))
        return parts
    if name == "epochs" and not raw:
        return None
    return int(raw)
