"""Training configuration and the flat ``key = value`` config format.

Keys are dotted (``sharing.preset``, ``bandit.alpha``).  Blank lines and
lines starting with ``#`` are ignored.  Data files are addressed as
``data.<task>.<split>.<side>`` with task in {main, entail, para}, split in
{train, dev} and side in {source, target}.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Mapping

from .sharing import TASKS


class ConfigError(ValueError):
    """Invalid key or value; ``key`` names the offender."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


SCHEDULES = ("static", "dynamic", "random", "ratio_from_trace")
_DATA_KEY = re.compile(r"^data\.(main|entail|para)\.(train|dev)\.(source|target)$")


def parse_ratio(text: str) -> tuple[int, int, int]:
    parts = [p.strip() for p in str(text).split(":")]
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ValueError(f"expected a:b:c with nonnegative integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_str(text: str) -> str | None:
    t = str(text).strip()
    return None if t in ("", "none") else t


@dataclass
class TrainConfig:
    mixing_ratio: tuple = field(default=(6, 1, 3), metadata={"key": "mixing_ratio", "parse": parse_ratio})
    schedule: str = field(default="static", metadata={"key": "schedule"})
    n_s: int = field(default=10, metadata={"key": "n_s"})
    steps: int = field(default=1000, metadata={"key": "steps"})
    rounds: int = field(default=100, metadata={"key": "rounds"})
    lam: float = field(default=5e-6, metadata={"key": "sharing.lambda"})
    preset: str = field(default="final", metadata={"key": "sharing.preset"})
    learning_rate: float = field(default=0.002, metadata={"key": "learning_rate"})
    clip_norm: float = field(default=2.0, metadata={"key": "clip_norm"})
    warm_start: str | None = field(default=None, metadata={"key": "warm_start", "parse": _opt_str})
    eval_subset_size: int = field(default=512, metadata={"key": "eval_subset_size"})
    seed: int = field(default=0, metadata={"key": "seed"})
    batch_size: int = field(default=16, metadata={"key": "batch_size"})
    hidden_size: int = field(default=256, metadata={"key": "model.hidden_size"})
    embedding_size: int = field(default=128, metadata={"key": "model.embedding_size"})
    init_scale: float = field(default=0.1, metadata={"key": "model.init_scale"})
    vocab_cap: int = field(default=50000, metadata={"key": "vocab.cap"})
    shared_vocab: bool = field(default=False, metadata={"key": "vocab.shared", "parse": _bool})
    bandit_alpha: float = field(default=0.3, metadata={"key": "bandit.alpha"})
    bandit_tau: float = field(default=1.0, metadata={"key": "bandit.tau"})
    bandit_q0: float = field(default=0.0, metadata={"key": "bandit.q0"})
    trace_fraction: float = field(default=0.1, metadata={"key": "trace.fraction"})
    trace_path: str | None = field(default=None, metadata={"key": "trace.path", "parse": _opt_str})
    eval_every: int = field(default=0, metadata={"key": "eval_every"})
    selection_beam: int = field(default=1, metadata={"key": "selection.beam_size"})
    max_len: int = field(default=50, metadata={"key": "max_len"})
    output_dir: str = field(default="run", metadata={"key": "output_dir"})
    data: dict = field(default_factory=dict, metadata={"key": None})

    def __post_init__(self):
        self.mixing_ratio = tuple(int(x) for x in self.mixing_ratio)
        self.validate()

    def validate(self) -> None:
        if self.schedule not in SCHEDULES:
            raise ConfigError("schedule", f"must be one of {SCHEDULES}, got {self.schedule!r}")
        if len(self.mixing_ratio) != 3 or any(x < 0 for x in self.mixing_ratio):
            raise ConfigError("mixing_ratio", "must be three nonnegative integers")
        if self.schedule == "static" and self.mixing_ratio[0] < 1:
            raise ConfigError("mixing_ratio", "static schedule needs at least one main batch per cycle")
        if self.n_s < 1:
            raise ConfigError("n_s", "must be >= 1")
        if self.lam < 0:
            raise ConfigError("sharing.lambda", "must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate", "must be positive")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm", "must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not 0 < self.trace_fraction <= 1:
            raise ConfigError("trace.fraction", "must lie in (0, 1]")

    def active_tasks(self) -> list[str]:
        """Tasks that need data under this schedule."""
        if self.schedule in ("static", "ratio_from_trace"):
            return [t for t, r in zip(TASKS, self.mixing_ratio) if r > 0]
        return list(TASKS)

    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            key = f.metadata.get("key")
            if key is None:
                continue
            v = getattr(self, f.name)
            if f.name == "mixing_ratio":
                v = ":".join(str(x) for x in v)
            out[key] = "none" if v is None else str(v)
        out.update(self.data)
        return out


_BY_KEY = {f.metadata["key"]: f for f in fields(TrainConfig) if f.metadata.get("key")}


def _convert(f, text: str):
    parse = f.metadata.get("parse")
    if parse is not None:
        return parse(text)
    default = f.default
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return str(text).strip()


def apply_overrides(cfg: TrainConfig, items: Mapping[str, str] | Iterable[tuple[str, str]]) -> TrainConfig:
    """Return a copy of ``cfg`` with flat key/value overrides applied."""
    items = items.items() if isinstance(items, Mapping) else items
    updates, data = {}, dict(cfg.data)
    for key, value in items:
        key = key.strip()
        if _DATA_KEY.match(key):
            data[key] = str(value).strip()
            continue
        f = _BY_KEY.get(key)
        if f is None:
            raise ConfigError(key, "unknown configuration key")
        try:
            updates[f.name] = _convert(f, value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return replace(cfg, data=data, **updates)


def parse_lines(lines: Iterable[str], origin: str = "<config>") -> list[tuple[str, str]]:
    pairs = []
    for n, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides: Iterable[str] = ()) -> TrainConfig:
    """Defaults, then the config file, then ``key=value`` overrides."""
    cfg = TrainConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = apply_overrides(cfg, parse_lines(fh, str(path)))
    return apply_overrides(cfg, parse_lines(overrides, "<override>"))


def write_config(cfg: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in cfg.to_flat().items():
            fh.write(f"{k} = {v}\n")
