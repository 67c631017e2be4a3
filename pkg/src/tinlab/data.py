"""Daily OHLCV ingestion, OBV, feature matrices and observation windows."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np

from . import oracles
from .errors import ConfigurationError, FormatError, RangeError, RowError

COLUMNS = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")
CHANNELS = ("price", "obv")


@dataclass(frozen=True)
class OhlcvBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def problems(self):
        out = []
        for name in ("open", "high", "low", "close", "adj_close"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"{name} must be a positive finite number, got {v}")
        if not (math.isfinite(self.volume) and self.volume >= 0):
            out.append(f"volume must be nonnegative, got {self.volume}")
        if not out:
            if self.low > min(self.open, self.close):
                out.append(f"low {self.low} above min(open, close)")
            if max(self.open, self.close) > self.high:
                out.append(f"high {self.high} below max(open, close)")
            if self.low > self.high:
                out.append(f"low {self.low} exceeds high {self.high}")
        return out


def parse_csv(text):
    """Parse CSV text into bars sorted by date.

    Header names are matched case-insensitively and may appear in any
    order. Invalid rows raise :class:`RowError` naming the 1-based line.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or not any(h.strip() for h in header):
        raise FormatError("empty CSV: no header row")
    index = {h.strip().lower(): i for i, h in enumerate(header)}
    missing = [c for c in COLUMNS if c.lower() not in index]
    if missing:
        raise FormatError(f"missing columns: {missing}")
    col = {c: index[c.lower()] for c in COLUMNS}
    bars = []
    for lineno, row in enumerate(reader, start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        try:
            d = date.fromisoformat(row[col["Date"]].strip())
        except (ValueError, IndexError) as exc:
            raise RowError(lineno, f"bad date: {exc}") from None
        try:
            nums = [float(row[col[c]]) for c in COLUMNS[1:]]
        except (ValueError, IndexError) as exc:
            raise RowError(lineno, f"bad number: {exc}") from None
        bar = OhlcvBar(d, *nums)
        bad = bar.problems()
        if bad:
            raise RowError(lineno, "; ".join(bad))
        bars.append((bar, lineno))
    if not bars:
        raise FormatError("CSV contains no data rows")
    bars.sort(key=lambda b: b[0].date)
    for (a, _), (b, line_b) in zip(bars, bars[1:]):
        if a.date == b.date:
            raise RowError(line_b, f"duplicate date {b.date}")
    return [b for b, _ in bars]


def load_csv(path):
    return parse_csv(Path(path).read_text())


def emit_csv(bars):
    """Inverse of :func:`parse_csv` (floats written with ``repr``)."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(COLUMNS)
    for b in bars:
        w.writerow([b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low),
                    repr(b.close), repr(b.adj_close), repr(b.volume)])
    return out.getvalue()


def compute_obv(bars):
    if not bars:
        raise RangeError("OBV needs at least one bar")
    return oracles.obv([b.adj_close for b in bars], [b.volume for b in bars])


@dataclass(frozen=True)
class FeatureMatrix:
    symbol: str
    channels: tuple
    rows: np.ndarray
    dates: tuple

    def __len__(self):
        return len(self.dates)

    @property
    def width(self):
        return len(self.channels)

    def channel(self, name):
        return self.rows[:, self.channels.index(name)]

    @property
    def prices(self):
        return self.channel("price")

    def slice(self, start, stop):
        return FeatureMatrix(self.symbol, self.channels, self.rows[start:stop], self.dates[start:stop])

    def between(self, first=None, last=None, history=0):
        """Rows dated within ``[first, last]`` plus ``history`` earlier rows."""
        lo = 0 if first is None else int(np.searchsorted(np.array(self.dates, dtype="datetime64[D]"),
                                                         np.datetime64(first, "D")))
        hi = len(self) if last is None else int(np.searchsorted(
            np.array(self.dates, dtype="datetime64[D]"), np.datetime64(last, "D"), side="right"))
        return self.slice(max(0, lo - history), hi)


def to_feature_matrix(bars, channels=("price",), symbol=""):
    if not bars:
        raise RangeError("no bars to build a feature matrix from")
    channels = tuple(channels)
    unknown = [c for c in channels if c not in CHANNELS]
    if unknown or not channels:
        raise ConfigurationError(f"unknown channels {unknown}; valid: {CHANNELS}")
    cols = []
    for c in channels:
        if c == "price":
            cols.append(np.array([b.adj_close for b in bars], dtype=np.float64))
        else:
            cols.append(compute_obv(bars))
    rows = np.ascontiguousarray(np.column_stack(cols))
    return FeatureMatrix(symbol, channels, rows, tuple(b.date for b in bars))


def window(fm, t, length=52, normalize=True):
    """Observation ending at row ``t``: channel-major, ``length * width`` values.

    With ``normalize``, price entries are divided by the window's last price
    and OBV entries by ``max(1, max |obv|)`` over the window.
    """
    if t >= len(fm) or t < length - 1:
        raise RangeError(f"window of {length} ending at row {t} needs rows {t - length + 1}..{t}")
    block = fm.rows[t - length + 1:t + 1]
    parts = []
    for j, name in enumerate(fm.channels):
        col = block[:, j]
        if normalize:
            if name == "price":
                col = col / col[-1]
            else:
                col = col / max(1.0, float(np.max(np.abs(col))))
        parts.append(col)
    return np.concatenate(parts)


def windows(fm, length=52, normalize=True):
    """All observation windows stacked; row ``i`` ends at feature row ``i + length - 1``."""
    if len(fm) < length:
        raise RangeError(f"need at least {length} rows, have {len(fm)}")
    view = np.lib.stride_tricks.sliding_window_view(fm.rows, length, axis=0)  # (T, width, length)
    view = np.array(view, dtype=np.float64)
    if normalize:
        for j, name in enumerate(fm.channels):
            if name == "price":
                view[:, j, :] /= view[:, j, -1:]
            else:
                view[:, j, :] /= np.maximum(1.0, np.abs(view[:, j, :]).max(axis=1, keepdims=True))
    return np.ascontiguousarray(view.reshape(view.shape[0], -1))


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_bars(kind, n, seed=0, start=date(2018, 1, 2), base=100.0):
    """Deterministic synthetic daily bars.

    ``kind``: ``"trend"`` (rising drift with noise), ``"sine"`` (period 20,
    5% amplitude) or ``"walk"`` (driftless random walk).
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    if kind == "trend":
        close = base * np.exp(0.0015 * t + np.cumsum(rng.normal(0, 0.004, n)))
    elif kind == "sine":
        close = base * (1 + 0.05 * np.sin(2 * np.pi * t / 20))
    elif kind == "walk":
        close = base * np.exp(np.cumsum(rng.normal(0, 0.012, n)))
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")
    prev = np.concatenate([[close[0]], close[:-1]])
    spread = np.abs(rng.normal(0, 0.004, n)) + 0.001
    high = np.maximum(prev, close) * (1 + spread)
    low = np.minimum(prev, close) * (1 - spread)
    volume = np.round(rng.uniform(1e5, 5e5, n))
    days = np.busday_offset(np.datetime64(start, "D"), np.arange(n), roll="forward")
    bars = []
    for i in range(n):
        o, c = float(round(prev[i], 6)), float(round(close[i], 6))
        h = max(float(round(high[i], 6)), o, c)
        lo = min(float(round(low[i], 6)), o, c)
        bars.append(OhlcvBar(days[i].astype(date), o, h, lo, c, c, float(volume[i])))
    return bars


def fixture_dir():
    return Path(__file__).parent / "fixtures"


FIXTURE_SYMBOLS = {"SYNA": ("trend", 11), "SYNB": ("sine", 12), "SYNC": ("walk", 13)}
FIXTURE_LENGTH = 600


def write_fixtures(directory=None):
    directory = Path(directory or fixture_dir())
    directory.mkdir(parents=True, exist_ok=True)
    for sym, (kind, seed) in FIXTURE_SYMBOLS.items():
        (directory / f"{sym}.csv").write_text(emit_csv(synthetic_bars(kind, FIXTURE_LENGTH, seed)))
