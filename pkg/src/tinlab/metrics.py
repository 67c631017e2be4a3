"""Risk-adjusted performance metrics and report assembly.

Metrics return ``None`` when undefined (zero variance, no downside, too
few points) instead of an infinity. The risk-free rate is zero and
annualization (``sqrt(252)``) is opt-in.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RangeError

TRADING_DAYS = 252
UNDEFINED = "undefined"
OVERALL_COLUMNS = ("strategy", "Sharpe Ratio", "Sortino Ratio", "Cumulative Sum")

STRATEGY_LABELS = {
    "in-price-obv": "MACD IN(Price,OBV)",
    "in-price": "MACD IN(Price)",
    "macd-classic": "MACD",
    "buy-hold": "Buy & Hold",
}


def simple_returns(equity_curve):
    e = np.asarray(equity_curve, dtype=np.float64)
    if e.ndim != 1 or len(e) < 2:
        raise RangeError("an equity curve needs at least two points")
    if not (np.isfinite(e).all() and (e > 0).all()):
        raise DomainError("equity must be positive and finite")
    return e[1:] / e[:-1] - 1.0


def _scale(annualize):
    return math.sqrt(TRADING_DAYS) if annualize else 1.0


def sharpe(returns, annualize=False):
    """Mean over sample standard deviation (n - 1 denominator)."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        return None
    sd = float(np.std(r, ddof=1))
    if not sd > 0:
        return None
    return float(np.mean(r)) / sd * _scale(annualize)


def downside_deviation(returns):
    r = np.asarray(returns, dtype=np.float64)
    return float(np.sqrt(np.mean(np.minimum(r, 0.0) ** 2)))


def sortino(returns, annualize=False):
    """Mean over downside deviation ``sqrt(mean(min(r, 0)^2))``, target 0."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        return None
    dd = downside_deviation(r)
    if not dd > 0:
        return None
    return float(np.mean(r)) / dd * _scale(annualize)


def cumulative_sum(returns):
    return float(math.fsum(returns))


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class StrategyRow:
    name: str
    sharpe: float | None
    sortino: float | None
    cumulative_sum: float


@dataclass(frozen=True)
class SymbolRow:
    symbol: str
    ratios: dict  # strategy -> (sharpe, sortino)


@dataclass
class PerformanceReport:
    strategies: list
    overall: list
    per_symbol: list
    curves: dict = field(default_factory=dict)  # strategy -> (dates, averaged returns)
    excluded: list = field(default_factory=list)
    annualize: bool = False

    def label(self, strategy):
        return STRATEGY_LABELS.get(strategy, strategy)

    def overall_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(OVERALL_COLUMNS)
        for row in self.overall:
            w.writerow([self.label(row.name), _cell(row.sharpe), _cell(row.sortino), _cell(row.cumulative_sum)])
        return out.getvalue()

    def per_symbol_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        header = ["symbol"]
        for s in self.strategies:
            header += [f"{self.label(s)} Sharpe", f"{self.label(s)} Sortino"]
        w.writerow(header)
        for row in self.per_symbol:
            cells = [row.symbol]
            for s in self.strategies:
                sh, so = row.ratios[s]
                cells += [_cell(sh), _cell(so)]
            w.writerow(cells)
        return out.getvalue()

    def to_text(self):
        """Aligned plain-text tables: metrics by strategy, then ratios by symbol."""
        labels = [self.label(s) for s in self.strategies]
        by_name = {r.name: r for r in self.overall}
        rows = [
            ["Sharpe Ratio"] + [_fmt(by_name[s].sharpe) for s in self.strategies],
            ["Sortino Ratio"] + [_fmt(by_name[s].sortino) for s in self.strategies],
            ["Cumulative Sum"] + [_pct(by_name[s].cumulative_sum) for s in self.strategies],
        ]
        parts = ["Overall Performance Metrics", _table([""] + labels, rows), ""]
        head = ["symbol"]
        for lab in labels:
            head += [f"{lab} Sharpe", f"{lab} Sortino"]
        sym_rows = []
        for row in self.per_symbol:
            cells = [row.symbol]
            for s in self.strategies:
                cells += [_fmt(v) for v in row.ratios[s]]
            sym_rows.append(cells)
        parts += ["Sharpe and Sortino Ratios", _table(head, sym_rows)]
        if self.excluded:
            parts += ["", "excluded: " + ", ".join(self.excluded)]
        return "\n".join(parts) + "\n"

    def to_svg(self, width=720, height=360):
        """Static line chart of cumulative summed returns per strategy."""
        pad = 40
        series = {s: np.cumsum(self.curves[s][1]) for s in self.strategies if len(self.curves.get(s, ((), ()))[1])}
        if not series:
            return f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"/>\n'
        lo = min(0.0, min(float(v.min()) for v in series.values()))
        hi = max(0.0, max(float(v.max()) for v in series.values()))
        span = hi - lo or 1.0
        n = max(len(v) for v in series.values())
        colors = ("#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd", "#ff7f0e")

        def xy(i, v):
            x = pad + (width - 2 * pad) * (i / max(1, n - 1))
            y = height - pad - (height - 2 * pad) * ((v - lo) / span)
            return f"{x:.2f},{y:.2f}"

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
               f'viewBox="0 0 {width} {height}">',
               f'<rect width="{width}" height="{height}" fill="white"/>']
        y0 = xy(0, 0.0).split(",")[1]
        out.append(f'<line x1="{pad}" y1="{y0}" x2="{width - pad}" y2="{y0}" stroke="#ccc"/>')
        for k, (s, v) in enumerate(series.items()):
            pts = " ".join(xy(i, float(val)) for i, val in enumerate(v))
            c = colors[k % len(colors)]
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
            out.append(f'<text x="{pad + 5}" y="{pad + 14 * (k + 1)}" fill="{c}" font-size="12">'
                       f'{_xml(self.label(s))}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _cell(v):
    return UNDEFINED if v is None else repr(float(v))


def _fmt(v):
    return UNDEFINED if v is None else f"{v:.4f}"


def _pct(v):
    return f"{100 * v:.2f}%"


def _xml(s):
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                       for i, (c, w) in enumerate(zip(r, widths))) for r in [header, *rows]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _dated_returns(result):
    r = simple_returns(result.equity_curve)
    dates = list(result.dates) if len(result.dates) == len(r) else list(range(len(r)))
    return dates, r


def build_report(results, annualize=False):
    """Assemble a report from ``{symbol: {strategy: EpisodeResult}}``.

    The overall row of each strategy uses the equal-weight average of the
    per-symbol daily returns, aligned on dates (each date averages the
    symbols that traded on it). Symbols with fewer than two equity points
    are left out with a warning.
    """
    if not results:
        raise RangeError("no results to report on")
    strategies = []
    for per in results.values():
        for s in per:
            if s not in strategies:
                strategies.append(s)
    per_symbol, excluded = [], []
    pooled = {s: {} for s in strategies}
    for sym in sorted(results):
        per = results[sym]
        if set(per) != set(strategies) or any(len(res.equity_curve) < 2 for res in per.values()):
            warnings.warn(f"{sym}: missing strategies or fewer than two equity points; excluded", stacklevel=2)
            excluded.append(sym)
            continue
        ratios = {}
        for s in strategies:
            dates, r = _dated_returns(per[s])
            ratios[s] = (sharpe(r, annualize), sortino(r, annualize))
            for d, v in zip(dates, r):
                pooled[s].setdefault(d, []).append(float(v))
        per_symbol.append(SymbolRow(sym, ratios))
    if not per_symbol:
        raise RangeError("every symbol was excluded")
    overall, curves = [], {}
    for s in strategies:
        dates = sorted(pooled[s])
        avg = np.array([math.fsum(pooled[s][d]) / len(pooled[s][d]) for d in dates])
        curves[s] = (dates, avg)
        overall.append(StrategyRow(s, sharpe(avg, annualize), sortino(avg, annualize), cumulative_sum(avg)))
    return PerformanceReport(strategies, overall, per_symbol, curves, excluded, annualize)
