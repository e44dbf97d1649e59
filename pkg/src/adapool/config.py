"""Flat ``key = value`` experiment files.

Blank lines and lines starting with ``#`` are ignored. Unknown or repeated
keys are errors.
"""

from dataclasses import fields

from .analysis import Thresholds
from .trainer import TrainingConfig


class ConfigError(ValueError):
    pass


def _optional_int(text):
    return None if text.lower() == "none" else int(text)


KEYS = {
    "preset": str,
    "n_classes": int,
    "learning_rate": float,
    "lr_decay": float,
    "decay_epoch": _optional_int,
    "batch_size": int,
    "epochs": int,
    "dropout": float,
    "seed": int,
    "pooling": str,
    "pool_lr_scale": float,
    "tau_a": float,
    "tau_cv": float,
    "tau_r2": float,
    "tau_cos": float,
    "tau_iou": float,
    "permutations": int,
}


def parse_config(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key!r}") from None
    return out


def load_config(path):
    with open(path) as f:
        return parse_config(f.read(), str(path))


def format_config(values):
    lines = []
    for k, v in values.items():
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"


def training_config(values, **overrides):
    names = {f.name for f in fields(TrainingConfig)}
    kwargs = {k: v for k, v in values.items() if k in names}
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainingConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def thresholds(values):
    names = {f.name for f in fields(Thresholds)}
    kwargs = {k: v for k, v in values.items() if k in names}
    if "seed" in values:
        kwargs["seed"] = values["seed"]
    return Thresholds(**kwargs)
