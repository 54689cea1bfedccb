"""Experiment configuration and its ``key = value`` text form.

One key per line, ``#`` starts a comment. Keys are the field names of
:class:`ExperimentConfig`; loss weights use ``loss_weights.<name>``. Lines
``grid.<field> = v1, v2, ...`` declare ablation axes for ``tryon-lab grid``.
"""

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigInvalid
from .objectives import LossWeights
from .representation import POSE_MODES
from .tryon_net import ACTIVATIONS

DATA_ENV = "TRYON_LAB_DATA"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _default_dataset():
    return os.environ.get(DATA_ENV, "data")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = field(default_factory=_default_dataset)
    split: str = "train"
    eval_split: str = "test"
    pose_mode: str = "dense"
    attention: bool = True
    activation: str = "gelu"
    flow: bool = False
    epochs: int = 10
    accumulated_batch: int = 64
    micro_batch: int = 0          # 0: pick from frame size
    lr: float = 1e-4
    decay_start_epoch: int = 5
    mixed_precision: bool = True
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    out_dir: str = "runs/default"
    base_width: int = 0           # 0: 32, or 64 from 192 px up
    depth: int = 0                # 0: pick from frame size
    heatmap_radius: float = 0.0   # 0: 3 px per 64 rows
    debug: bool = False           # re-check the loss decomposition every step

    def validate(self):
        if self.pose_mode not in POSE_MODES:
            raise ConfigInvalid(f"pose_mode must be one of {POSE_MODES}")
        if self.activation not in ACTIVATIONS:
            raise ConfigInvalid(f"activation must be one of {ACTIVATIONS}")
        if self.epochs < 1:
            raise ConfigInvalid("epochs must be >= 1")
        if self.accumulated_batch < 1 or self.micro_batch < 0:
            raise ConfigInvalid("batch sizes must be positive")
        if self.micro_batch and self.accumulated_batch % self.micro_batch:
            raise ConfigInvalid("accumulated_batch must be divisible by micro_batch")
        if not self.lr > 0:
            raise ConfigInvalid("lr must be positive")
        if self.base_width < 0 or self.depth < 0:
            raise ConfigInvalid("base_width and depth must be >= 0 (0 picks from frame size)")
        if self.decay_start_epoch < 0:
            raise ConfigInvalid("decay_start_epoch must be >= 0")
        return self

    def replace(self, **changes):
        lw = {k.split(".", 1)[1]: changes.pop(k) for k in list(changes) if k.startswith("loss_weights.")}
        cfg = self
        if lw:
            cfg = dataclasses.replace(cfg, loss_weights=dataclasses.replace(cfg.loss_weights, **lw))
        return dataclasses.replace(cfg, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "loss_weights":
                for lf in fields(LossWeights):
                    lines.append(f"loss_weights.{lf.name} = {_fmt(getattr(value, lf.name))}")
            else:
                lines.append(f"{f.name} = {_fmt(value)}")
        return "\n".join(lines) + "\n"


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_LW_TYPES = {f.name: f.type for f in fields(LossWeights)}


def coerce(key, raw):
    """Parse ``raw`` text into the type of config field ``key``."""
    if key.startswith("loss_weights."):
        name = key.split(".", 1)[1]
        if name not in _LW_TYPES:
            raise ConfigInvalid(f"unknown loss weight {name!r}")
        typ = float
    elif key in _FIELD_TYPES and key != "loss_weights":
        typ = _FIELD_TYPES[key]
    else:
        raise ConfigInvalid(f"unknown config key {key!r}")
    raw = raw.strip()
    typ = {"bool": bool, "int": int, "float": float, "str": str}.get(typ, typ)
    try:
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"bad value for {key}: {raw!r}") from exc


def parse_config(text, base=None):
    """Returns ``(config, grid_axes)``."""
    changes, axes = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith("grid."):
            axis = key[5:]
            axes[axis] = [coerce(axis, v) for v in raw.split(",") if v.strip()]
        else:
            changes[key] = coerce(key, raw)
    cfg = (base or ExperimentConfig()).replace(**changes)
    return cfg.validate(), axes


def load_config(path, base=None):
    return parse_config(Path(path).read_text(), base)
