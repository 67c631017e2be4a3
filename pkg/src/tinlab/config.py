"""Run configuration: a flat ``key = value`` document.

Blank lines and ``#`` comments are ignored; unknown keys are rejected.
Command-line flags override file values. ``TINLAB_DATA_DIR`` sets the
data root when ``data_dir`` is not given; otherwise the shipped fixtures
are used.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .builders import Init, _bool
from .dqn import DqnConfig
from .env import EnvConfig
from .errors import ConfigurationError, FormatError


def _symbols(v):
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _date(v):
    try:
        return date.fromisoformat(v.strip())
    except ValueError:
        raise FormatError(f"not an ISO date: {v!r}") from None


def _opt(conv):
    return lambda v: None if v.strip().lower() in ("", "none") else conv(v)


@dataclass(frozen=True)
class RunConfig:
    data_dir: str | None = None
    symbols: tuple = ()
    output_dir: str = "runs"
    seed: int = 0
    train_start: date | None = None
    train_end: date | None = None
    test_start: date | None = None
    test_end: date | None = None
    split_fraction: float = 0.7
    # network
    window_len: int = 52
    hidden: int = 26
    init: str = "ReplicateEMA"
    activation: str = "identity"
    # environment
    cost_rate: float = 0.0
    allow_short: bool = False
    normalize: bool = True
    # agent
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 5000
    buffer_capacity: int = 10000
    batch_size: int = 32
    lr: float = 1e-3
    target_sync_every: int = 200
    episodes: int = 50
    optimizer: str = "adam"
    # classical MACD baseline
    fast: int = 12
    slow: int = 26
    signal: int = 9

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ConfigurationError("split_fraction must lie in (0, 1)")
        if not 1 <= self.fast < self.slow:
            raise ConfigurationError("need 1 <= fast < slow")
        if self.signal < 1:
            raise ConfigurationError("signal must be >= 1")
        if self.hidden < 1:
            raise ConfigurationError("hidden must be >= 1")
        if self.activation not in ("identity", "relu"):
            raise ConfigurationError(f"activation must be identity or relu, got {self.activation!r}")
        Init.parse(self.init)
        for a, b in (("train_start", "train_end"), ("test_start", "test_end"), ("train_end", "test_start")):
            lo, hi = getattr(self, a), getattr(self, b)
            if lo is not None and hi is not None and lo > hi:
                raise ConfigurationError(f"{a} {lo} is after {b} {hi}")
        self.env_config()
        self.dqn_config()

    def data_root(self):
        if self.data_dir:
            return Path(self.data_dir)
        env = os.environ.get("TINLAB_DATA_DIR")
        if env:
            return Path(env)
        from .data import fixture_dir

        return fixture_dir()

    def env_config(self):
        return EnvConfig(window_len=self.window_len, cost_rate=self.cost_rate,
                         allow_short=self.allow_short, normalize=self.normalize)

    def dqn_config(self, seed=None):
        return DqnConfig(gamma=self.gamma, epsilon_start=self.epsilon_start, epsilon_end=self.epsilon_end,
                         epsilon_decay_steps=self.epsilon_decay_steps, buffer_capacity=self.buffer_capacity,
                         batch_size=self.batch_size, lr=self.lr, target_sync_every=self.target_sync_every,
                         episodes=self.episodes, seed=self.seed if seed is None else seed,
                         optimizer=self.optimizer)

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def dumps(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            conv = _FIELDS.get(key)
            if conv is None:
                raise FormatError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = conv(value)
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text())


_FIELDS = {
    "data_dir": _opt(str),
    "symbols": _symbols,
    "output_dir": str,
    "seed": int,
    "train_start": _opt(_date),
    "train_end": _opt(_date),
    "test_start": _opt(_date),
    "test_end": _opt(_date),
    "split_fraction": float,
    "window_len": int,
    "hidden": int,
    "init": str,
    "activation": str,
    "cost_rate": float,
    "allow_short": _bool,
    "normalize": _bool,
    "gamma": float,
    "epsilon_start": float,
    "epsilon_end": float,
    "epsilon_decay_steps": int,
    "buffer_capacity": int,
    "batch_size": int,
    "lr": float,
    "target_sync_every": int,
    "episodes": int,
    "optimizer": str,
    "fast": int,
    "slow": int,
    "signal": int,
}
