"""Experiment configuration with full-scale defaults and key=value files."""

import configparser
from dataclasses import dataclass, fields

from .errors import DataError


@dataclass
class ExperimentConfig:
    # network
    k: int = 6                  # input sequence length
    n_layers: int = 2
    filter_size: int = 5
    hidden: int = 32            # ConvLSTM hidden states per layer
    head_hidden: int = 32       # 1x1 conv hidden states
    channels_out: int = 2       # inflow + outflow, predicted jointly
    ext_len: int = 0
    # training
    lr: float = 1e-3
    pretrain_epochs: int = 100
    transfer_epochs: int = 200
    batch_size: int = 0         # 0 = full batch (one step per epoch)
    pretrain_window_stride: int = 1
    early_stop_patience: int = 10
    early_stop_delta: float = 1e-6
    seed: int = 1
    checked: bool = False       # NaN/Inf detection on gradients
    # transfer
    w: float = 0.75             # trade-off weight for the two loss terms
    frozen_anchor: bool = False  # compute source representations with the
                                 # pretrained parameters instead of current

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise DataError(f"w must lie in [0,1], got {self.w}")
        if self.k < 1 or self.n_layers < 1:
            raise DataError("k and n_layers must be >= 1")
        if self.pretrain_epochs < 1 or self.transfer_epochs < 0:
            raise DataError("bad epoch counts")
        if self.filter_size % 2 == 0:
            raise DataError(f"filter size must be odd, got {self.filter_size}")
        if self.hidden < 1 or self.head_hidden < 1 or self.channels_out < 1:
            raise DataError("channel counts must be >= 1")


def desk_config(**overrides):
    """Small-network configuration for laptop-scale experiments.

    One ConvLSTM layer with 3x3 filters and 8 hidden maps, mini-batched
    ADAM, a converging pretrain budget, and the frozen-anchor alignment.
    Accepts field overrides.
    """
    base = dict(k=4, n_layers=1, filter_size=3, hidden=8, head_hidden=8,
                channels_out=2, ext_len=4, lr=3e-3, batch_size=4,
                pretrain_epochs=40, transfer_epochs=200,
                frozen_anchor=True, w=0.35)
    base.update(overrides)
    return ExperimentConfig(**base)


_SECTIONS = {
    "network": ("k", "n_layers", "filter_size", "hidden", "head_hidden",
                "channels_out", "ext_len"),
    "training": ("lr", "pretrain_epochs", "transfer_epochs", "batch_size",
                 "pretrain_window_stride", "early_stop_patience",
                 "early_stop_delta", "seed", "checked"),
    "transfer": ("w", "frozen_anchor"),
}

_TYPES = {f.name: (f.type if isinstance(f.type, str) else f.type.__name__)
          for f in fields(ExperimentConfig)}


def _parse_value(key, raw):
    kind = _TYPES[key]
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise DataError(f"config key '{key}': not a boolean: {raw!r}")
    try:
        return int(raw) if kind == "int" else float(raw)
    except ValueError:
        raise DataError(f"config key '{key}': malformed value {raw!r}") from None


def load_config(path, base=None):
    """Read a sectioned key=value file; unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except FileNotFoundError:
        raise DataError(f"{path}: config file not found") from None
    except configparser.Error as e:
        raise DataError(f"{path}: {e}") from None
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise DataError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                raise DataError(f"{path}: unknown key '{key}' in [{section}]")
            values[key] = _parse_value(key, raw)
    if base is not None:
        merged = {f.name: getattr(base, f.name)
                  for f in fields(ExperimentConfig)}
        merged.update(values)
        values = merged
    return ExperimentConfig(**values)


def save_config(config, path):
    with open(path, "w") as f:
        for section, keys in _SECTIONS.items():
            f.write(f"[{section}]\n")
            for key in keys:
                f.write(f"{key} = {getattr(config, key)}\n")
            f.write("\n")
