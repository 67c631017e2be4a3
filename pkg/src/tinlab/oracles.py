"""Reference implementations of the classical indicators.

These are plain loops over windows, deliberately independent of the graph
code, and serve as ground truth for the indicator networks. Every function
returns a float64 array aligned to the *end* of the input: element ``i``
belongs to time index ``i + warmup`` where ``warmup`` is the number of
leading samples the indicator needs (``n - 1`` for a window of ``n``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, DomainError

EPS_ORACLE = 1e-12
EPS_TRAIN = 1e-8
CCI_CONSTANT = 0.015


@dataclass(frozen=True)
class SeriesView:
    """A price series with optional aligned high/low/close/volume channels."""

    values: tuple
    high: tuple | None = None
    low: tuple | None = None
    close: tuple | None = None
    volume: tuple | None = None

    def __post_init__(self):
        n = len(self.values)
        for name in ("values", "high", "low", "close", "volume"):
            ch = getattr(self, name)
            if ch is None:
                continue
            ch = tuple(float(v) for v in ch)
            object.__setattr__(self, name, ch)
            if len(ch) != n:
                raise DimensionError(f"channel {name!r} has length {len(ch)}, expected {n}")
            if not all(np.isfinite(ch)):
                raise DomainError(f"channel {name!r} contains non-finite values")
        if self.high is not None and self.low is not None:
            if any(lo > hi for lo, hi in zip(self.low, self.high)):
                raise DomainError("low exceeds high")

    def __len__(self):
        return len(self.values)


def _vals(s):
    if isinstance(s, SeriesView):
        return list(s.values)
    return [float(v) for v in s]


def _window_ok(n, length, need=None):
    need = n if need is None else need
    if n < 1 or need > length:
        raise DimensionError(f"window {n} out of range for series of length {length}")


def _aligned(*channels):
    lengths = {len(c) for c in channels}
    if len(lengths) != 1:
        raise DimensionError(f"channel lengths differ: {sorted(lengths)}")


def _mean(xs):
    acc = 0.0
    for x in xs:
        acc += x
    return acc / len(xs)


def sma(s, n):
    p = _vals(s)
    _window_ok(n, len(p))
    return np.array([_mean(p[t - n + 1:t + 1]) for t in range(n - 1, len(p))])


def truncated_ema_weights(n):
    """Lag-indexed weights: entry k multiplies the value k steps back."""
    alpha = 2.0 / (n + 1)
    raw = [alpha * (1.0 - alpha) ** k for k in range(n)]
    total = 0.0
    for r in raw:
        total += r
    return [r / total for r in raw]


def ema(s, n, mode="truncated"):
    p = _vals(s)
    if mode == "recursive":
        # no window: only the smoothing constant depends on n
        _window_ok(n, len(p), need=1)
        alpha = 2.0 / (n + 1)
        out = [p[0]]
        for x in p[1:]:
            out.append(alpha * x + (1.0 - alpha) * out[-1])
        return np.array(out)
    if mode != "truncated":
        raise ConfigurationError(f"unknown ema mode {mode!r}")
    _window_ok(n, len(p))
    w = truncated_ema_weights(n)
    out = []
    for t in range(n - 1, len(p)):
        acc = 0.0
        for k in range(n):
            acc += w[k] * p[t - k]
        out.append(acc)
    return np.array(out)


def _ma(p, n, mode):
    if mode == "sma":
        return sma(p, n)
    if mode == "ema":
        return ema(p, n, "truncated")
    raise ConfigurationError(f"unknown moving-average mode {mode!r}")


def macd(s, fast, slow, sig, mode="ema", conventional=False):
    """MACD line, signal line and histogram.

    By default the line is ``MA_slow - MA_fast``; ``conventional=True`` gives
    the usual ``MA_fast - MA_slow``. The signal line is a truncated EMA of the
    line. Outputs start at index ``slow + sig - 2``.
    """
    p = _vals(s)
    if fast >= slow:
        raise ConfigurationError(f"MACD needs fast < slow, got {fast} >= {slow}")
    if sig < 1 or fast < 1:
        raise ConfigurationError("MACD windows must be >= 1")
    _window_ok(slow, len(p), slow + sig - 1)
    ma_fast = _ma(p, fast, mode)[slow - fast:]
    ma_slow = _ma(p, slow, mode)
    if conventional:
        line = [f - s_ for f, s_ in zip(ma_fast, ma_slow)]
    else:
        line = [s_ - f for f, s_ in zip(ma_fast, ma_slow)]
    signal = ema(line, sig, "truncated")
    line = np.array(line[sig - 1:])
    return line, signal, line - signal


def rsi(s, n, eps=EPS_ORACLE):
    """Cutler RSI: simple window means of gains and losses."""
    p = _vals(s)
    if n < 1 or len(p) < n + 1:
        raise DimensionError(f"RSI window {n} needs at least {n + 1} values, got {len(p)}")
    out = []
    for t in range(n, len(p)):
        gains, losses = [], []
        for j in range(t - n + 1, t + 1):
            d = p[j] - p[j - 1]
            gains.append(max(d, 0.0))
            losses.append(max(-d, 0.0))
        g, lo = _mean(gains), _mean(losses)
        out.append(100.0 * g / (g + lo + eps))
    return np.array(out)


def roc(s, n, eps=EPS_ORACLE):
    p = _vals(s)
    if n < 1 or len(p) <= n:
        raise DimensionError(f"ROC lag {n} needs more than {n} values, got {len(p)}")
    if any(x <= 0 for x in p):
        raise DomainError("ROC requires strictly positive prices")
    return np.array([100.0 * (p[t] - p[t - n]) / (p[t - n] + eps) for t in range(n, len(p))])


def stoch_k(high, low, close, n, eps=EPS_ORACLE):
    h, lo, c = _vals(high), _vals(low), _vals(close)
    _aligned(h, lo, c)
    _window_ok(n, len(c))
    out = []
    for t in range(n - 1, len(c)):
        hh = max(h[t - n + 1:t + 1])
        ll = min(lo[t - n + 1:t + 1])
        out.append(100.0 * (c[t] - ll) / (hh - ll + eps))
    return np.array(out)


def stoch_d(k_series, m):
    return sma(k_series, m)


def typical_price(high, low, close):
    h, lo, c = _vals(high), _vals(low), _vals(close)
    _aligned(h, lo, c)
    return [(a + b + x) / 3.0 for a, b, x in zip(h, lo, c)]


def cci(high, low, close, n, eps=EPS_ORACLE):
    tp = typical_price(high, low, close)
    _window_ok(n, len(tp))
    out = []
    for t in range(n - 1, len(tp)):
        win = tp[t - n + 1:t + 1]
        mu = _mean(win)
        dev = _mean([abs(x - mu) for x in win])
        out.append((tp[t] - mu) / (CCI_CONSTANT * (dev + eps)))
    return np.array(out)


def obv(close, volume):
    c, v = _vals(close), _vals(volume)
    _aligned(c, v)
    if any(x < 0 for x in v):
        raise DomainError("volume must be nonnegative")
    if not c:
        return np.array([])
    out = [0.0]
    for t in range(1, len(c)):
        d = c[t] - c[t - 1]
        step = v[t] if d > 0 else (-v[t] if d < 0 else 0.0)
        out.append(out[-1] + step)
    return np.array(out)


WARMUP = {
    "sma": lambda w: w["n"] - 1,
    "ema": lambda w: w["n"] - 1,
    "macd": lambda w: w["slow"] + w["signal"] - 2,
    "rsi": lambda w: w["n"],
    "roc": lambda w: w["n"],
    "stoch_k": lambda w: w["n"] - 1,
    "stoch_d": lambda w: w["n"] + w["m"] - 2,
    "cci": lambda w: w["n"] - 1,
    "obv": lambda w: 0,
}
