"""On-disk formats: JSON configs, CSV tables and the binary critic container.

Critic container layout (all little-endian)::

    8 bytes   magic b"RKHSMI\\x00\\x01"
    8 bytes   uint64 header length L
    L bytes   UTF-8 JSON header: kind, d, D / hidden, arrays [{name, shape}], meta
    ...       float64 arrays in header order, C order
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .complexity import RegWeights
from .critics import AsklParams, Critic, MlpParams
from .errors import ConfigError, RkhsMiError
from .harness import TrainConfig

MAGIC = b"RKHSMI\x00\x01"
FORMAT_VERSION = 1

STEPS_COLUMNS = ("step", "level_true_mi", "bound_value", "smoothed_value", "train_objective", "reg_value")
STATS_COLUMNS = (
    "estimator", "critic", "batch_size", "lambda1", "lambda2",
    "true_mi", "bias", "variance", "rmse", "n_estimates",
)


class CriticFormatError(RkhsMiError, ValueError):
    pass


# ------------------------------------------------------------------ critics


def save_critic(path, p: Critic, meta: Optional[dict] = None) -> None:
    arrays = p.arrays()
    header: Dict[str, Any] = {
        "version": FORMAT_VERSION,
        "kind": p.kind,
        "d": p.input_dim,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
        "meta": meta or {},
    }
    if isinstance(p, AsklParams):
        header["D"] = p.feature_dim
    else:
        header["hidden"] = list(p.hidden)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_critic(path) -> Tuple[Critic, dict]:
    """Read a critic container; returns ``(params, header)``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CriticFormatError(f"cannot read critic file {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CriticFormatError(f"{path} is not a critic container (bad magic)")
    try:
        (hlen,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (struct.error, ValueError) as exc:
        raise CriticFormatError(f"corrupt header in {path}: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CriticFormatError(f"unsupported container version {header.get('version')}")
    pos = 16 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(raw):
            raise CriticFormatError(f"truncated array {spec['name']} in {path}")
        arrays[spec["name"]] = np.frombuffer(raw[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
        pos = end
    if pos != len(raw):
        raise CriticFormatError(f"{len(raw) - pos} trailing bytes in {path}")
    if header["kind"] == "askl":
        p: Critic = AsklParams(**{k: arrays[k] for k in ("Omega", "OmegaPrime", "b", "bprime", "w")})
    elif header["kind"] == "mlp":
        n = len(header["hidden"]) + 1
        p = MlpParams([arrays[f"W{i}"] for i in range(n)], [arrays[f"b{i}"] for i in range(n)])
    else:
        raise CriticFormatError(f"unknown critic kind {header['kind']!r}")
    return p, header


# ---------------------------------------------------------------------- CSV


def fmt(value) -> str:
    """Shortest round-trip text for floats; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    """Everything a ``train`` or ``sweep`` run reads from its JSON config.

    ``lambda1``/``lambda2`` left as ``None`` resolve to the per-estimator
    defaults; ``lr`` to the per-critic default. ``schedule`` is a list of
    ``[true_mi_nats, steps]`` pairs.
    """

    critic: str = "askl"
    estimator: str = "nwj"
    feature_dim: int = 512
    freq_scale: Optional[float] = None
    hidden: List[int] = field(default_factory=lambda: [256, 256])
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    batch_size: int = 64
    lr: Optional[float] = None
    schedule: List[List[float]] = field(default_factory=lambda: [[2.0, 4000], [4.0, 4000], [6.0, 4000]])
    seed: int = 0
    dim: int = 20
    cubed: bool = False
    ema_decay: float = 0.99
    eval_batch: bool = False
    log_every: int = 0
    smooth_decay: float = 0.99
    # sweep-only
    estimators: Optional[List[str]] = None
    critics: Optional[List[str]] = None
    batch_sizes: List[int] = field(default_factory=lambda: [32, 64, 128, 256])
    lambda1_grid: Optional[List[float]] = None
    lambda2_grid: Optional[List[float]] = None
    trials: int = 1
    tail_frac: float = 0.2
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not 0 <= self.smooth_decay < 1:
            raise ConfigError(f"smooth_decay must lie in [0, 1), got {self.smooth_decay}")
        # surface TrainConfig validation errors as config errors
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def reg_for(self, estimator: str, critic: str) -> Optional[RegWeights]:
        if self.lambda1 is None and self.lambda2 is None:
            return None
        return RegWeights(self.lambda1 or 0.0, self.lambda2 or 0.0)

    def train_config(self, **overrides) -> TrainConfig:
        estimator = overrides.pop("estimator", self.estimator)
        critic = overrides.pop("critic", self.critic)
        kw = dict(
            critic=critic,
            estimator=estimator,
            feature_dim=self.feature_dim,
            freq_scale=self.freq_scale,
            hidden=tuple(self.hidden),
            reg=self.reg_for(estimator, critic),
            batch_size=self.batch_size,
            lr=self.lr,
            schedule=[tuple(e) for e in self.schedule],
            seed=self.seed,
            dim=self.dim,
            cubed=self.cubed,
            ema_decay=self.ema_decay,
            eval_batch=self.eval_batch,
            log_every=self.log_every,
        )
        kw.update(overrides)
        return TrainConfig(**kw)


def train_config_dict(cfg: TrainConfig) -> dict:
    """JSON-ready snapshot of a fully resolved training config."""
    return {
        "critic": cfg.critic,
        "estimator": cfg.estimator,
        "feature_dim": cfg.feature_dim,
        "freq_scale": cfg.freq_scale,
        "hidden": list(cfg.hidden),
        "lambda1": cfg.reg.lambda1,
        "lambda2": cfg.reg.lambda2,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "schedule": [[mi, steps] for mi, steps in cfg.schedule],
        "seed": cfg.seed,
        "trial": cfg.trial,
        "dim": cfg.dim,
        "cubed": cfg.cubed,
        "ema_decay": cfg.ema_decay,
        "eval_batch": cfg.eval_batch,
        "log_every": cfg.log_every,
    }


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
