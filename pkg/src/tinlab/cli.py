"""Command-line front end.

Exit codes: 0 success, 1 a check or run failed, 2 usage or data error.
"""
from __future__ import annotations

import argparse
import sys
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data, metrics, oracles
from .builders import LINEAR_KINDS, IndicatorNetworkSpec, build, verify_replication
from .config import RunConfig
from .dqn import QNetwork, greedy_policy, qnet_spec_for, train
from .env import Action, buy_and_hold, run_policy
from .errors import TinlabError
from .gradcheck import sweep

VARIANTS = {"in-price": ("price",), "in-price-obv": ("price", "obv")}
STRATEGIES = ("in-price-obv", "in-price", "macd-classic", "buy-hold")

REPLICATION_SPECS = {
    "SMA": dict(kind="MA", windows={"n": 12}, init="ReplicateSMA"),
    "EMA": dict(kind="EMA", windows={"n": 12}, init="ReplicateEMA"),
    "MACD": dict(kind="MACD", windows={"fast": 12, "slow": 26, "signal": 9}, init="ReplicateEMA"),
    "RSI": dict(kind="RSI", windows={"n": 14}),
    "ROC": dict(kind="ROC", windows={"n": 12}),
    "STOCH": dict(kind="STOCH", windows={"n": 14, "m": 3}),
    "CCI": dict(kind="CCI", windows={"n": 20}),
}

ORACLES = ("sma", "ema", "macd", "rsi", "roc", "stoch_k", "stoch_d", "cci", "obv")


class CommandError(Exception):
    """Usage or data problem detected by a command; exit code 2."""


# ---------------------------------------------------------------------------
# shared plumbing


def _load_config(args):
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k: getattr(args, k, None) for k in ("data_dir", "output_dir", "seed", "episodes")}
    if getattr(args, "symbols", None):
        overrides["symbols"] = tuple(s.strip() for s in args.symbols.split(",") if s.strip())
    return cfg.replace(**overrides)


def _symbol_files(cfg):
    root = cfg.data_root()
    if not root.is_dir():
        raise CommandError(f"data directory not found: {root}")
    if cfg.symbols:
        files = {s: root / f"{s}.csv" for s in cfg.symbols}
        missing = [str(p) for p in files.values() if not p.is_file()]
        if missing:
            raise CommandError(f"missing data files: {', '.join(missing)}")
        return files
    files = {p.stem: p for p in sorted(root.glob("*.csv"))}
    if not files:
        raise CommandError(f"no *.csv files in {root}")
    return files


def _load_bars(cfg):
    return {sym: data.load_csv(path) for sym, path in _symbol_files(cfg).items()}


def _split(fm, cfg, part):
    """Training or out-of-sample slice; the test slice keeps window history."""
    history = cfg.window_len - 1
    dated = cfg.train_start or cfg.train_end or cfg.test_start or cfg.test_end
    if dated:
        if part == "train":
            return fm.between(cfg.train_start, cfg.train_end)
        return fm.between(cfg.test_start, cfg.test_end, history=history)
    cut = int(len(fm) * cfg.split_fraction)
    return fm.slice(0, cut) if part == "train" else fm.slice(max(0, cut - history), len(fm))


def _seed_for(seed, symbol, variant):
    ss = np.random.SeedSequence([seed, zlib.crc32(symbol.encode()), zlib.crc32(variant.encode())])
    return int(ss.generate_state(1)[0])


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _run_dir(cfg, name):
    return Path(cfg.output_dir) / name


# ---------------------------------------------------------------------------
# commands


def cmd_verify_replication(args):
    cfg = _load_config(args)
    bars = _load_bars(cfg)
    views = [oracles.SeriesView(values=[b.adj_close for b in bs], high=[b.high for b in bs],
                                low=[b.low for b in bs], close=[b.close for b in bs]) for bs in bars.values()]
    print(f"{'indicator':<10}{'max_abs_err':>14}{'tol':>10}  result")
    ok = True
    for label, kw in REPLICATION_SPECS.items():
        net = build(IndicatorNetworkSpec(**kw))
        if args.corrupt_weights and label == "MACD":
            for p in net.graph.trainable_parameters().values():
                p.tensor.values += args.corrupt_weights
        tol = args.tol_linear if net.spec.kind in LINEAR_KINDS else args.tol_regularized
        worst = max(verify_replication(net, v, tol).max_abs_err for v in views)
        passed = worst <= tol
        ok &= passed
        print(f"{label:<10}{worst:>14.3e}{tol:>10.0e}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_oracle(args):
    if args.data:
        path = Path(args.data)
        if not path.is_file():
            raise CommandError(f"data file not found: {path}")
        bars = data.load_csv(path)
    else:
        cfg = _load_config(args)
        files = _symbol_files(cfg.replace(symbols=(args.symbol,)) if args.symbol else cfg)
        bars = data.load_csv(next(iter(files.values())))
    price = [b.adj_close for b in bars]
    high, low, close = [b.high for b in bars], [b.low for b in bars], [b.close for b in bars]
    name = args.name
    if name == "macd":
        cols = oracles.macd(price, args.fast, args.slow, args.signal, conventional=args.conventional)
        header = ["macd", "signal", "hist"]
    elif name == "stoch_k":
        cols, header = [oracles.stoch_k(high, low, close, args.n)], ["value"]
    elif name == "stoch_d":
        cols, header = [oracles.stoch_d(oracles.stoch_k(high, low, close, args.n), args.m)], ["value"]
    elif name == "cci":
        cols, header = [oracles.cci(high, low, close, args.n)], ["value"]
    elif name == "obv":
        cols, header = [oracles.obv(price, [b.volume for b in bars])], ["value"]
    elif name == "ema":
        cols, header = [oracles.ema(price, args.n, mode=args.ema_mode)], ["value"]
    else:
        cols, header = [getattr(oracles, name)(price, args.n)], ["value"]
    n = min(len(c) for c in cols)
    cols = [np.asarray(c)[len(c) - n:] for c in cols]
    dates = [b.date for b in bars][len(bars) - n:]
    out = sys.stdout
    out.write("date," + ",".join(header) + "\n")
    for i, d in enumerate(dates):
        out.write(d.isoformat() + "," + ",".join(repr(float(c[i])) for c in cols) + "\n")
    return 0


def _train_one(cfg, bars, symbol, variant):
    fm = data.to_feature_matrix(bars, VARIANTS[variant], symbol)
    train_fm = _split(fm, cfg, "train")
    env_cfg = cfg.env_config()
    seed = _seed_for(cfg.seed, symbol, variant)
    spec = qnet_spec_for(train_fm, env_cfg, hidden=cfg.hidden, init=cfg.init,
                         activation=cfg.activation, seed=seed)
    qnet, log = train(train_fm, env_cfg, cfg.dqn_config(seed), spec)
    return qnet, log


def cmd_train(args):
    cfg = _load_config(args)
    bars = _load_bars(cfg)
    variants = args.variant or list(VARIANTS)
    root = _run_dir(cfg, args.name)
    _write(root / "config.txt", cfg.dumps())
    jobs = [(sym, v) for sym in bars for v in variants]

    def job(item):
        sym, v = item
        try:
            qnet, log = _train_one(cfg, bars[sym], sym, v)
        except (TinlabError, ValueError) as exc:
            return sym, v, str(exc)
        out = root / v / sym
        _write(out / "params.txt", qnet.dumps())
        _write(out / "trainlog.csv", log.to_csv())
        _write(out / "timing.csv", log.timing_csv())
        return sym, v, None

    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]
    failed = 0
    for sym, v, err in results:
        print(f"{v:<14}{sym:<10}{'ok' if err is None else 'FAILED: ' + err}")
        failed += err is not None
    return 1 if failed else 0


def macd_crossover_policy(window_len, fast=12, slow=26, signal=9):
    """Classical rule: buy when the histogram crosses above zero, sell when
    it crosses below, hold otherwise. Reads the price channel of the window."""

    def policy(obs):
        prices = obs[:window_len]
        hist = oracles.macd(prices, fast, slow, signal, conventional=True)[2]
        prev, now = hist[-2], hist[-1]
        if prev <= 0.0 < now:
            return Action.BUY
        if prev >= 0.0 > now:
            return Action.SELL
        return Action.HOLD

    return policy


def cmd_backtest(args):
    cfg = _load_config(args)
    cfg = cfg.replace(fast=args.fast, slow=args.slow, signal=args.signal)
    strategies = args.strategy or list(STRATEGIES)
    if "macd-classic" in strategies and cfg.window_len < cfg.slow + cfg.signal:
        raise CommandError(f"window_len {cfg.window_len} is too short for MACD({cfg.fast},{cfg.slow},{cfg.signal})")
    bars = _load_bars(cfg)
    root = _run_dir(cfg, args.name)
    params = {}
    for s in strategies:
        if s in VARIANTS:
            for sym in bars:
                p = root / s / sym / "params.txt"
                if not p.is_file():
                    raise CommandError(f"no trained parameters for {s} on {sym}: {p} (run 'tinlab train' first)")
                params[s, sym] = QNetwork.loads(p.read_text())
    env_cfg = cfg.env_config()
    results = {}
    for sym, bs in bars.items():
        per = {}
        for s in strategies:
            fm = _split(data.to_feature_matrix(bs, VARIANTS.get(s, ("price",)), sym), cfg, "test")
            if s in VARIANTS:
                policy = greedy_policy(params[s, sym])
            elif s == "macd-classic":
                policy = macd_crossover_policy(cfg.window_len, cfg.fast, cfg.slow, cfg.signal)
            else:
                policy = buy_and_hold
            per[s] = run_policy(fm, env_cfg, policy)
            _write(root / "backtest" / sym / f"{s}.csv", per[s].to_csv())
        results[sym] = per
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = metrics.build_report(results, annualize=args.annualize)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = root / "backtest"
    _write(out / "report_overall.csv", report.overall_csv())
    _write(out / "report_symbols.csv", report.per_symbol_csv())
    _write(out / "report.txt", report.to_text())
    _write(out / "cumulative.svg", report.to_svg())
    print(report.to_text(), end="")
    return 0


def cmd_grad_check(args):
    rows = sweep(cases=args.cases, h=args.h, tol=args.tol, seed=args.seed)
    print(f"{'op':<14}{'cases':>7}{'max_rel_error':>16}{'tol':>10}  result")
    for r in rows:
        print(f"{r.kind.value:<14}{r.cases:>7}{r.max_rel_error:>16.3e}{r.tol:>10.0e}  "
              f"{'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in rows) else 1


# ---------------------------------------------------------------------------
# parser


def _positive_int(v):
    i = int(v)
    if i < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return i


def _positive_float(v):
    f = float(v)
    if not f > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return f


def _common(p, run=False):
    p.add_argument("--config", help="run configuration file (key = value)")
    p.add_argument("--data-dir", help="directory of <SYMBOL>.csv files (default: $TINLAB_DATA_DIR or fixtures)")
    p.add_argument("--symbols", help="comma-separated symbols (default: every CSV in the data directory)")
    if run:
        p.add_argument("--output-dir", help="root for run directories (default from config: runs)")
        p.add_argument("--name", default="default", help="run name; outputs go to <output-dir>/<name>")
        p.add_argument("--seed", type=int, help="base seed (default from config: 0)")


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    ap = argparse.ArgumentParser(prog="tinlab", description="Technical indicator networks: replication, "
                                 "training and backtesting.", formatter_class=fmt)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-replication", help="check every indicator network against its oracle",
                       formatter_class=fmt)
    _common(p)
    p.add_argument("--tol-linear", type=_positive_float, default=1e-9, help="tolerance for SMA, EMA, MACD")
    p.add_argument("--tol-regularized", type=_positive_float, default=1e-6,
                   help="tolerance for RSI, ROC, STOCH, CCI")
    p.add_argument("--corrupt-weights", type=float, default=0.0,
                   help="debug: add this offset to every MACD weight before checking")
    p.set_defaults(func=cmd_verify_replication)

    p = sub.add_parser("oracle", help="print a reference indicator as CSV", formatter_class=fmt)
    _common(p)
    p.add_argument("name", choices=ORACLES, help="indicator")
    p.add_argument("--data", help="OHLCV CSV file (default: first symbol in the data directory)")
    p.add_argument("--symbol", help="symbol to read from the data directory")
    p.add_argument("--n", type=int, default=14, help="window length")
    p.add_argument("--m", type=int, default=3, help="%%D smoothing window")
    p.add_argument("--fast", type=int, default=12, help="MACD fast window")
    p.add_argument("--slow", type=int, default=26, help="MACD slow window")
    p.add_argument("--signal", type=int, default=9, help="MACD signal window")
    p.add_argument("--conventional", action="store_true", help="MACD line as fast minus slow")
    p.add_argument("--ema-mode", choices=("truncated", "recursive"), default="truncated", help="EMA form")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", help="train DQN indicator networks per symbol", formatter_class=fmt)
    _common(p, run=True)
    p.add_argument("--variant", action="append", choices=list(VARIANTS),
                   help="network input variant, repeatable (default: all)")
    p.add_argument("--episodes", type=int, help="training episodes (default from config: 50)")
    p.add_argument("--parallel", type=_positive_int, default=1, help="worker threads")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("backtest", help="evaluate strategies out of sample and write reports",
                       formatter_class=fmt)
    _common(p, run=True)
    p.add_argument("--strategy", action="append", choices=STRATEGIES,
                   help="strategy, repeatable (default: all)")
    p.add_argument("--fast", type=_positive_int, help="classical MACD fast window (default from config: 12)")
    p.add_argument("--slow", type=_positive_int, help="classical MACD slow window (default from config: 26)")
    p.add_argument("--signal", type=_positive_int, help="classical MACD signal window (default from config: 9)")
    p.add_argument("--annualize", action="store_true", help="scale ratios by sqrt(252)")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("grad-check", help="finite-difference sweep over every operator kind",
                       formatter_class=fmt)
    p.add_argument("--h", type=_positive_float, default=1e-6, help="central-difference step")
    p.add_argument("--cases", type=_positive_int, default=100, help="random cases per operator")
    p.add_argument("--tol", type=_positive_float, default=1e-4, help="max relative error")
    p.add_argument("--seed", type=int, default=0, help="sweep seed")
    p.set_defaults(func=cmd_grad_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CommandError, TinlabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
