"""Single-asset daily trading simulation executed at adjusted close."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from . import data
from .errors import ConfigurationError, DomainError, RangeError, UsageError


class Action(enum.IntEnum):
    BUY = 0
    SELL = 1
    HOLD = 2


@dataclass(frozen=True)
class EnvConfig:
    window_len: int = 52
    cost_rate: float = 0.0
    allow_short: bool = False
    start: int | None = None
    end: int | None = None
    normalize: bool = True

    def __post_init__(self):
        if self.window_len < 1:
            raise ConfigurationError("window_len must be >= 1")
        if not 0 <= self.cost_rate < 1:
            raise ConfigurationError("cost_rate must lie in [0, 1)")


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: Action
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class EpisodeResult:
    equity_curve: list = field(default_factory=lambda: [1.0])
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dates: list = field(default_factory=list)
    trade_count: int = 0

    @property
    def final_equity(self):
        return self.equity_curve[-1]

    def to_csv(self):
        """``date,action,reward,equity``; one row per step, equity after the step."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["date", "action", "reward", "equity"])
        for d, a, r, e in zip(self.dates, self.actions, self.rewards, self.equity_curve[1:]):
            w.writerow([d.isoformat(), a.name.lower(), repr(float(r)), repr(float(e))])
        return out.getvalue()


class TradingEnv:
    """Decides at row ``t`` with the window ending at ``t``; the reward is
    earned over ``t -> t + 1`` by the position held after the trade."""

    def __init__(self, fm, cfg=None):
        self.fm = fm
        self.cfg = cfg or EnvConfig()
        L = self.cfg.window_len
        first = L - 1 if self.cfg.start is None else max(self.cfg.start, L - 1)
        last = len(fm) - 1 if self.cfg.end is None else min(self.cfg.end, len(fm) - 1)
        if last - first < 1:
            raise RangeError(f"{len(fm)} rows cannot hold a {L}-row window plus one step")
        self.first, self.last = first, last
        self.prices = np.asarray(fm.prices, dtype=np.float64)
        if (self.prices <= 0).any():
            raise DomainError("prices must be positive")
        self._obs = data.windows(fm.slice(first - L + 1, last + 1), L, self.cfg.normalize)
        self.t = None

    @property
    def steps(self):
        return self.last - self.first

    @property
    def obs_dim(self):
        return self._obs.shape[1]

    def observation(self, t=None):
        return self._obs[(self.t if t is None else t) - self.first]

    def reset(self):
        self.t = self.first
        self.position = 0
        self.equity = 1.0
        self.done = False
        return self.observation()

    def _target(self, action):
        action = Action(action)
        if action is Action.BUY:
            return 1
        if action is Action.SELL:
            return -1 if self.cfg.allow_short else 0
        return self.position

    def step(self, action):
        if self.t is None:
            raise UsageError("call reset() before step()")
        if self.done:
            raise UsageError("episode is finished; call reset()")
        t = self.t
        new_pos = self._target(action)
        traded = new_pos != self.position
        self.position = new_pos
        p0, p1 = self.prices[t], self.prices[t + 1]
        reward = self.position * (p1 - p0) / p0 - (self.cfg.cost_rate if traded else 0.0)
        self.equity *= 1.0 + reward
        if not self.equity > 0:
            raise DomainError("equity fell to zero or below")
        self.t = t + 1
        self.done = self.t == self.last
        self.traded = traded
        return self.observation(), float(reward), self.done


def reset(fm, cfg=None):
    """Build an environment and return ``(env, first observation)``."""
    env = TradingEnv(fm, cfg)
    return env, env.reset()


def run_policy(fm, cfg, policy):
    """Roll ``policy(obs) -> Action`` through one full episode."""
    env, obs = reset(fm, cfg)
    res = EpisodeResult()
    done = False
    while not done:
        a = Action(policy(obs))
        d = fm.dates[env.t]
        obs, r, done = env.step(a)
        res.actions.append(a)
        res.rewards.append(r)
        res.dates.append(d)
        res.equity_curve.append(res.equity_curve[-1] * (1.0 + r))
        res.trade_count += env.traded
    return res


def always(action):
    return lambda obs: action


def buy_and_hold(obs):
    return Action.BUY
