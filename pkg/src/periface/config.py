"""Run configuration: flat dotted-key files, typed access, stable hashing.

A config file is plain text, one ``key = value`` per line, ``#`` for
comments.  Keys are dotted (``mapper.n_layers``, ``adv.gamma``); the
full resolved mapping (defaults included) is hashed with sha256 and the
hash is embedded in checkpoints so a resumed run cannot silently drift.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError
from .losses import LossWeights

PHASES = ("stylegandb", "real-images")


@dataclass
class RunConfig:
    phase: str = "stylegandb"
    batch_size: int = 16
    steps: int = 50
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    mapper_layers: int = 4
    adv_gamma: float = 10.0
    checkpoint_every: int = 500
    data_dir: str = ""
    out_dir: str = ""
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.mapper_layers not in (2, 4, 8):
            raise ConfigError(f"mapper.n_layers must be 2, 4 or 8, got {self.mapper_layers}")
        if self.adv_gamma < 0:
            raise ConfigError(f"adv.gamma must be >= 0, got {self.adv_gamma}")

    def to_flat(self) -> dict:
        flat = {
            "phase": self.phase,
            "train.batch_size": self.batch_size,
            "train.steps": self.steps,
            "train.lr": self.lr,
            "adam.beta1": self.beta1,
            "adam.beta2": self.beta2,
            "seed": self.seed,
            "mapper.n_layers": self.mapper_layers,
            "adv.gamma": self.adv_gamma,
            "checkpoint.every": self.checkpoint_every,
            "data.dir": self.data_dir,
            "out.dir": self.out_dir,
        }
        for name in (
            "lam_id", "lam_lnd", "lam_perc", "lam_style", "lam_rec",
            "lam_perc_opt", "lam_id_opt", "lam_mse_opt", "alpha",
        ):
            flat[f"loss.{name}"] = getattr(self.weights, name)
        return flat

    def hash(self) -> str:
        flat = self.to_flat()
        text = "\n".join(f"{k}={flat[k]!r}" for k in sorted(flat))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


_KEY_FIELDS = {
    "phase": ("phase", str),
    "train.batch_size": ("batch_size", int),
    "train.steps": ("steps", int),
    "train.lr": ("lr", float),
    "adam.beta1": ("beta1", float),
    "adam.beta2": ("beta2", float),
    "seed": ("seed", int),
    "mapper.n_layers": ("mapper_layers", int),
    "adv.gamma": ("adv_gamma", float),
    "checkpoint.every": ("checkpoint_every", int),
    "data.dir": ("data_dir", str),
    "out.dir": ("out_dir", str),
}

_WEIGHT_KEYS = {
    f"loss.{name}": name
    for name in (
        "lam_id", "lam_lnd", "lam_perc", "lam_style", "lam_rec",
        "lam_perc_opt", "lam_id_opt", "lam_mse_opt", "alpha",
    )
}


def parse_config_text(text: str) -> dict:
    """Raw key -> string mapping; duplicate keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())
    if overrides:
        raw.update({k: str(v) for k, v in overrides.items()})
    return config_from_flat(raw)


def config_from_flat(raw: dict) -> RunConfig:
    kwargs = {}
    weight_kwargs = {}
    for key, value in raw.items():
        if key in _KEY_FIELDS:
            name, typ = _KEY_FIELDS[key]
            try:
                kwargs[name] = typ(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        elif key in _WEIGHT_KEYS:
            try:
                weight_kwargs[_WEIGHT_KEYS[key]] = float(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if weight_kwargs:
        kwargs["weights"] = LossWeights(**weight_kwargs)
    return RunConfig(**kwargs)
