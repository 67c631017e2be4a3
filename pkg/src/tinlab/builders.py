"""Indicator networks: graphs whose wiring and initial weights reproduce an indicator.

Each ``build_*`` function returns an :class:`IndicatorNetwork`. With a
``Replicate*`` initialization and untouched weights its outputs equal the
matching function in :mod:`tinlab.oracles`; :func:`verify_replication`
checks that claim over a whole series.

Weights that encode the structure of a formula (the x100 scaling, the 1/3
typical-price weights, the 1/0.015 CCI constant) are fixed parameters.
Moving-average weight vectors are trainable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from .errors import ConfigurationError, DimensionError, FormatError, UsageError
from .graph import Graph, OpKind, Parameter, Tensor

KINDS = ("MA", "EMA", "MACD", "RSI", "ROC", "STOCH", "CCI", "QNET")
LINEAR_KINDS = ("MA", "EMA", "MACD")


def sma_weights(n):
    if n < 1:
        raise ConfigurationError(f"window must be >= 1, got {n}")
    return np.full(n, 1.0 / n)


def ema_weights(n):
    """Normalized geometric-decay weights, oldest first (index n-1 is the latest)."""
    if n < 1:
        raise ConfigurationError(f"window must be >= 1, got {n}")
    alpha = 2.0 / (n + 1)
    lag = alpha * (1.0 - alpha) ** np.arange(n)
    return (lag / lag.sum())[::-1].copy()


# ---------------------------------------------------------------------------
# initialization schemes


@dataclass(frozen=True)
class Init:
    scheme: str = "ReplicateSMA"
    sigma: float = 0.0
    lo: float = -0.05
    hi: float = 0.05

    _PAT = re.compile(r"^\s*(\w+)\s*(?:\(([^)]*)\))?\s*$")

    def __post_init__(self):
        if self.scheme not in ("ReplicateSMA", "ReplicateEMA", "PerturbedReplicate", "RandomUniform"):
            raise ConfigurationError(f"unknown init scheme {self.scheme!r}")
        if self.sigma < 0:
            raise ConfigurationError("PerturbedReplicate sigma must be >= 0")
        if not self.lo < self.hi:
            raise ConfigurationError("RandomUniform needs lo < hi")

    @classmethod
    def parse(cls, text):
        if isinstance(text, Init):
            return text
        m = cls._PAT.match(str(text))
        if not m:
            raise ConfigurationError(f"cannot parse init {text!r}")
        name, args = m.group(1), m.group(2)
        vals = [float(a) for a in args.split(",")] if args else []
        if name == "PerturbedReplicate":
            if len(vals) != 1:
                raise ConfigurationError("PerturbedReplicate takes one argument (sigma)")
            return cls(name, sigma=vals[0])
        if name == "RandomUniform":
            if len(vals) != 2:
                raise ConfigurationError("RandomUniform takes two arguments (lo, hi)")
            return cls(name, lo=vals[0], hi=vals[1])
        if vals:
            raise ConfigurationError(f"{name} takes no arguments")
        return cls(name)

    def __str__(self):
        if self.scheme == "PerturbedReplicate":
            return f"PerturbedReplicate({self.sigma!r})"
        if self.scheme == "RandomUniform":
            return f"RandomUniform({self.lo!r},{self.hi!r})"
        return self.scheme

    @property
    def replicates(self):
        return self.scheme in ("ReplicateSMA", "ReplicateEMA") or (
            self.scheme == "PerturbedReplicate" and self.sigma == 0.0
        )


# ---------------------------------------------------------------------------
# spec document


@dataclass
class IndicatorNetworkSpec:
    kind: str
    windows: dict = field(default_factory=dict)
    feature_dim: int = 1
    init: Init = field(default_factory=Init)
    eps: float = oracles.EPS_ORACLE
    input_len: int = 0
    hidden: int = 0
    actions: int = 3
    activation: str = "identity"
    ma_mode: str = ""
    conventional: bool = False
    seed: int = 0
    channels: tuple = ()

    def __post_init__(self):
        self.kind = str(self.kind).upper()
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown network kind {self.kind!r}; expected one of {KINDS}")
        self.init = Init.parse(self.init)
        self.windows = {k: int(v) for k, v in self.windows.items()}
        if any(v < 1 for v in self.windows.values()):
            raise ConfigurationError(f"all windows must be >= 1, got {self.windows}")
        if self.feature_dim < 1:
            raise ConfigurationError("feature_dim must be >= 1")
        if not self.eps > 0:
            raise ConfigurationError("eps must be > 0")
        if not self.ma_mode:
            if self.init.scheme == "ReplicateSMA":
                self.ma_mode = "sma"
            elif self.init.scheme == "ReplicateEMA" or self.kind in ("EMA", "MACD", "QNET"):
                self.ma_mode = "ema"
            else:
                self.ma_mode = "sma"
        if self.ma_mode not in ("sma", "ema"):
            raise ConfigurationError(f"ma_mode must be 'sma' or 'ema', got {self.ma_mode!r}")
        self.channels = tuple(self.channels)
        need = {
            "MA": ("n",), "EMA": ("n",), "MACD": ("fast", "slow", "signal"),
            "RSI": ("n",), "ROC": ("n",), "STOCH": ("n", "m"), "CCI": ("n",), "QNET": (),
        }[self.kind]
        missing = [k for k in need if k not in self.windows]
        if missing:
            raise ConfigurationError(f"{self.kind} spec is missing windows {missing}")
        if self.kind == "MACD" and self.windows["fast"] >= self.windows["slow"]:
            raise ConfigurationError("MACD needs fast < slow")
        if self.kind == "QNET":
            if self.hidden < 1 or self.input_len < 1:
                raise ConfigurationError("QNET needs explicit hidden >= 1 and input_len >= 1")
            if self.actions != 3:
                raise ConfigurationError("QNET has exactly three actions")
        minimum = self.min_input_len()
        if self.input_len == 0:
            self.input_len = minimum
        if self.input_len < minimum:
            raise ConfigurationError(f"input_len {self.input_len} is shorter than the {minimum} the windows need")

    def min_input_len(self):
        w = self.windows
        return {
            "MA": lambda: w["n"], "EMA": lambda: w["n"],
            "MACD": lambda: w["slow"] + w["signal"] - 1,
            "RSI": lambda: w["n"] + 1, "ROC": lambda: w["n"] + 1,
            "STOCH": lambda: w["n"] + w["m"] - 1, "CCI": lambda: w["n"],
            "QNET": lambda: 1,
        }[self.kind]()

    def dumps(self):
        """Flat ``key = value`` text; see README for the grammar."""
        lines = [
            f"kind = {self.kind}",
            f"input_len = {self.input_len}",
            f"feature_dim = {self.feature_dim}",
            f"init = {self.init}",
            f"eps = {self.eps!r}",
            f"ma_mode = {self.ma_mode}",
            f"conventional = {str(self.conventional).lower()}",
            f"hidden = {self.hidden}",
            f"actions = {self.actions}",
            f"activation = {self.activation}",
            f"seed = {self.seed}",
            f"channels = {','.join(self.channels)}",
        ]
        lines += [f"window.{k} = {v}" for k, v in sorted(self.windows.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        fields_, windows = {}, {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("window."):
                windows[key[len("window."):]] = int(value)
                continue
            conv = _SPEC_FIELDS.get(key)
            if conv is None:
                raise FormatError(f"line {lineno}: unknown key {key!r}")
            fields_[key] = conv(value)
        if "kind" not in fields_:
            raise FormatError("spec document has no 'kind'")
        return cls(windows=windows, **fields_)


def _bool(v):
    v = v.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise FormatError(f"not a boolean: {v!r}")


_SPEC_FIELDS = {
    "kind": str, "input_len": int, "feature_dim": int, "init": Init.parse, "eps": float,
    "ma_mode": str, "conventional": _bool, "hidden": int, "actions": int, "activation": str,
    "seed": int, "channels": lambda v: tuple(c.strip() for c in v.split(",") if c.strip()),
}


# ---------------------------------------------------------------------------
# networks


@dataclass(eq=False)
class IndicatorNetwork:
    spec: IndicatorNetworkSpec
    graph: Graph
    input_len: int
    input_names: tuple
    trained: bool = False
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None

    @property
    def outputs(self):
        return dict(self.graph.outputs)

    def parameter_count(self, trainable_only=True):
        ps = self.graph.trainable_parameters() if trainable_only else self.graph.parameters()
        return sum(p.tensor.size for p in ps.values())

    def run(self, **windows):
        """Evaluate one input window per channel; returns ``{output: float}``."""
        out = self.graph.forward(windows)
        return {k: (t.values[0] if t.size == 1 else t.values.copy()) for k, t in out.items()}

    def run_series(self, **series):
        """Slide the input window over whole series; returns ``{output: array}``.

        Element ``i`` of each output belongs to the window ending at
        ``i + input_len - 1``.
        """
        length = {len(v) for v in series.values()}
        if len(length) != 1:
            raise DimensionError("series channels differ in length")
        (n,) = length
        if n < self.input_len:
            raise DimensionError(f"series of length {n} is shorter than input_len {self.input_len}")
        batch = {}
        for name, v in series.items():
            arr = np.ascontiguousarray(v, dtype=np.float64)
            batch[name] = np.lib.stride_tricks.sliding_window_view(arr, self.input_len)
        out = self.graph.forward_batch(batch)
        return {k: v[:, 0] if v.shape[1] == 1 else v for k, v in out.items()}


class _Builder:
    """Helper holding the graph and the spec-driven weight initializer."""

    def __init__(self, spec):
        self.spec = spec
        self.g = Graph()
        self.rng = np.random.default_rng(spec.seed)

    def ma_weights(self, n):
        return ema_weights(n) if self.spec.ma_mode == "ema" else sma_weights(n)

    def trainable(self, base, name):
        init = self.spec.init
        w = np.array(base, dtype=np.float64)
        if init.scheme == "PerturbedReplicate" and init.sigma > 0:
            w = w + self.rng.normal(0.0, init.sigma, w.size)
        elif init.scheme == "RandomUniform":
            w = self.rng.uniform(init.lo, init.hi, w.size)
        return self.g.parameter(w, trainable=True, name=name)

    def fixed(self, values, name):
        return self.g.parameter(np.array(values, dtype=np.float64), trainable=False, name=name)

    def network(self, input_names, **extra):
        return IndicatorNetwork(self.spec, self.g, self.spec.input_len, tuple(input_names), **extra)


def _ma(spec):
    b = _Builder(spec)
    n, off = spec.windows["n"], spec.input_len - spec.windows["n"]
    x = b.g.input("x", spec.input_len)
    w = b.trainable(b.ma_weights(n), "ma")
    b.g.set_output("ma", b.g.add(OpKind.WEIGHTED_SUM, [w, (x, off, off + n)]))
    return b.network(["x"])


def _macd(spec):
    b = _Builder(spec)
    fast, slow, sig = spec.windows["fast"], spec.windows["slow"], spec.windows["signal"]
    x = b.g.input("x", spec.input_len)
    base = spec.input_len - (slow + sig - 1)
    wf = b.trainable(b.ma_weights(fast), "fast")
    ws = b.trainable(b.ma_weights(slow), "slow")
    lines = []
    for j in range(sig):
        end = base + slow + j
        f = b.g.add(OpKind.WEIGHTED_SUM, [wf, (x, end - fast, end)])
        s = b.g.add(OpKind.WEIGHTED_SUM, [ws, (x, end - slow, end)])
        lines.append(b.g.add(OpKind.SUBTRACT, [f, s] if spec.conventional else [s, f]))
    wsig = b.trainable(ema_weights(sig), "signal")
    signal = b.g.add(OpKind.WEIGHTED_SUM, [wsig] + lines)
    hist = b.g.add(OpKind.SUBTRACT, [lines[-1], signal])
    b.g.set_output("macd", lines[-1])
    b.g.set_output("signal", signal)
    b.g.set_output("histogram", hist)
    return b.network(["x"])


def _rsi(spec):
    b = _Builder(spec)
    n, L = spec.windows["n"], spec.input_len
    x = b.g.input("x", L)
    cur, prev = (x, L - n, L), (x, L - n - 1, L - 1)
    gains = b.g.add(OpKind.CLIP, [b.g.add(OpKind.SUBTRACT, [cur, prev])], lo=0.0, hi=np.inf)
    losses = b.g.add(OpKind.CLIP, [b.g.add(OpKind.SUBTRACT, [prev, cur])], lo=0.0, hi=np.inf)
    g_mean = b.g.add(OpKind.WEIGHTED_SUM, [b.trainable(sma_weights(n), "gain_mean"), gains])
    l_mean = b.g.add(OpKind.WEIGHTED_SUM, [b.trainable(sma_weights(n), "loss_mean"), losses])
    total = b.g.add(OpKind.WEIGHTED_SUM, [b.fixed([1.0, 1.0], "sum"), g_mean, l_mean])
    ratio = b.g.add(OpKind.DIV_BIAS, [g_mean, total], eps=spec.eps)
    b.g.set_output("rsi", b.g.add(OpKind.WEIGHTED_SUM, [b.fixed([100.0], "scale"), ratio]))
    return b.network(["x"])


def _roc(spec):
    b = _Builder(spec)
    n, L = spec.windows["n"], spec.input_len
    x = b.g.input("x", L)
    past = (x, L - n - 1, L - n)
    diff = b.g.add(OpKind.SUBTRACT, [(x, L - 1, L), past])
    ratio = b.g.add(OpKind.DIV_BIAS, [diff, past], eps=spec.eps)
    b.g.set_output("roc", b.g.add(OpKind.WEIGHTED_SUM, [b.fixed([100.0], "scale"), ratio]))
    return b.network(["x"])


def _stoch(spec):
    b = _Builder(spec)
    n, m, L = spec.windows["n"], spec.windows["m"], spec.input_len
    hi, lo, cl = (b.g.input(c, L) for c in ("high", "low", "close"))
    span = (L - (n + m - 1), L)
    top = b.g.add(OpKind.MAX_POOL_1D, [(hi, *span)], k=n)
    bottom = b.g.add(OpKind.MIN_POOL_1D, [(lo, *span)], k=n)
    num = b.g.add(OpKind.SUBTRACT, [(cl, L - m, L), bottom])
    rng = b.g.add(OpKind.SUBTRACT, [top, bottom])
    ratio = b.g.add(OpKind.DIV_BIAS, [num, rng], eps=spec.eps)
    b.g.set_output("k", b.g.add(OpKind.WEIGHTED_SUM, [b.fixed([100.0], "scale_k"), (ratio, m - 1, m)]))
    d_weights = b.trainable(sma_weights(m), "d_mean")
    scaled = b.g.add(OpKind.WEIGHTED_SUM, [d_weights, ratio])
    b.g.set_output("d", b.g.add(OpKind.WEIGHTED_SUM, [b.fixed([100.0], "scale_d"), scaled]))
    return b.network(["high", "low", "close"])


def _cci(spec):
    b = _Builder(spec)
    n, L = spec.windows["n"], spec.input_len
    hi, lo, cl = (b.g.input(c, L) for c in ("high", "low", "close"))
    third = b.fixed([1.0 / 3.0] * 3, "typical")
    tps = [b.g.add(OpKind.WEIGHTED_SUM, [third, (hi, t, t + 1), (lo, t, t + 1), (cl, t, t + 1)])
           for t in range(L - n, L)]
    mu = b.g.add(OpKind.MEAN, tps)
    dev = b.g.add(OpKind.MAD, tps)
    num = b.g.add(OpKind.SUBTRACT, [tps[-1], mu])
    ratio = b.g.add(OpKind.DIV_BIAS, [num, dev], eps=spec.eps)
    scale = b.fixed([1.0 / oracles.CCI_CONSTANT], "lambert")
    b.g.set_output("cci", b.g.add(OpKind.WEIGHTED_SUM, [scale, ratio]))
    return b.network(["high", "low", "close"])


def qnet_hidden_windows(input_len, hidden):
    """EMA windows for the hidden units, spread evenly over [2, input_len / 2]."""
    top = max(2, input_len // 2)
    return [int(v) for v in np.rint(np.linspace(2, top, hidden))]


def _qnet(spec, hidden_windows=None):
    b = _Builder(spec)
    L, d, H, A = spec.input_len, spec.feature_dim, spec.hidden, spec.actions
    D = L * d
    init = spec.init
    if init.scheme == "RandomUniform":
        w1 = b.rng.uniform(init.lo, init.hi, (H, D))
        w2 = b.rng.uniform(init.lo, init.hi, (A, H))
    else:
        windows = list(hidden_windows) if hidden_windows is not None else qnet_hidden_windows(L, H)
        if len(windows) != H or any(not 1 <= w <= L for w in windows):
            raise ConfigurationError(f"need {H} hidden windows within [1, {L}], got {windows}")
        w1 = np.zeros((H, D))
        for j, n in enumerate(windows):
            prof = ema_weights(n) if spec.ma_mode == "ema" else sma_weights(n)
            for c in range(d):
                w1[j, c * L + L - n:(c + 1) * L] = prof
        if init.scheme == "PerturbedReplicate" and init.sigma > 0:
            w1 += b.rng.normal(0.0, init.sigma, w1.shape)
        w2 = b.rng.uniform(-0.05, 0.05, (A, H))
    w1 = np.ascontiguousarray(w1)
    w2 = np.ascontiguousarray(w2)
    obs = b.g.input("obs", D)
    hidden = []
    for j in range(H):
        pid = b.g.parameter(Parameter(Tensor((D,), w1[j]), trainable=True, name=f"hidden{j}"))
        pre = b.g.add(OpKind.WEIGHTED_SUM, [pid, obs])
        hidden.append(b.g.add(OpKind.ACTIVATION, [pre], fn=spec.activation))
    for a in range(A):
        pid = b.g.parameter(Parameter(Tensor((H,), w2[a]), trainable=True, name=f"action{a}"))
        b.g.set_output(f"q{a}", b.g.add(OpKind.WEIGHTED_SUM, [pid] + hidden))
    return b.network(["obs"], w1=w1, w2=w2)


_BUILDERS = {"MA": _ma, "EMA": _ma, "MACD": _macd, "RSI": _rsi, "ROC": _roc,
             "STOCH": _stoch, "CCI": _cci, "QNET": _qnet}


def build(spec, **kw):
    if not isinstance(spec, IndicatorNetworkSpec):
        raise ConfigurationError("build() expects an IndicatorNetworkSpec")
    return _BUILDERS[spec.kind](spec, **kw)


def build_ma_in(n, init="ReplicateSMA", **kw):
    return build(IndicatorNetworkSpec("MA", {"n": n}, init=init, **kw))


def build_macd_in(fast, slow, sig, init="ReplicateEMA", **kw):
    return build(IndicatorNetworkSpec("MACD", {"fast": fast, "slow": slow, "signal": sig}, init=init, **kw))


def build_rsi_in(n, init="ReplicateSMA", **kw):
    return build(IndicatorNetworkSpec("RSI", {"n": n}, init=init, **kw))


def build_roc_in(n, init="ReplicateSMA", **kw):
    return build(IndicatorNetworkSpec("ROC", {"n": n}, init=init, **kw))


def build_stoch_in(n, m, init="ReplicateSMA", **kw):
    return build(IndicatorNetworkSpec("STOCH", {"n": n, "m": m}, init=init, **kw))


def build_cci_in(n, init="ReplicateSMA", **kw):
    return build(IndicatorNetworkSpec("CCI", {"n": n}, init=init, **kw))


def build_q_in(input_len=52, hidden=26, actions=3, feature_dim=1, init="ReplicateEMA",
               activation="identity", seed=0, hidden_windows=None, **kw):
    spec = IndicatorNetworkSpec("QNET", feature_dim=feature_dim, init=init, input_len=input_len,
                                hidden=hidden, actions=actions, activation=activation, seed=seed, **kw)
    return _qnet(spec, hidden_windows=hidden_windows)


# ---------------------------------------------------------------------------
# replication check


@dataclass
class ReplicationReport:
    kind: str
    max_abs_err: float
    argmax: int
    tol: float
    per_output: dict

    @property
    def passed(self):
        return self.max_abs_err <= self.tol


def _channels(data):
    if isinstance(data, oracles.SeriesView):
        out = {"values": np.array(data.values)}
        for name in ("high", "low", "close", "volume"):
            ch = getattr(data, name)
            if ch is not None:
                out[name] = np.array(ch)
        return out
    return {k: np.asarray(v, dtype=np.float64) for k, v in data.items()}


def oracle_outputs(spec, data):
    """Oracle values for ``spec``'s kind, keyed like the network's outputs."""
    ch = _channels(data)
    w, eps = spec.windows, spec.eps
    k = spec.kind
    if k in ("MA", "EMA"):
        x = ch["values"]
        return {"ma": oracles.sma(x, w["n"]) if spec.ma_mode == "sma" else oracles.ema(x, w["n"])}
    if k == "MACD":
        line, sig, hist = oracles.macd(ch["values"], w["fast"], w["slow"], w["signal"],
                                       mode=spec.ma_mode, conventional=spec.conventional)
        return {"macd": line, "signal": sig, "histogram": hist}
    if k == "RSI":
        return {"rsi": oracles.rsi(ch["values"], w["n"], eps)}
    if k == "ROC":
        return {"roc": oracles.roc(ch["values"], w["n"], eps)}
    if k == "STOCH":
        kk = oracles.stoch_k(ch["high"], ch["low"], ch["close"], w["n"], eps)
        return {"k": kk[w["m"] - 1:], "d": oracles.stoch_d(kk, w["m"])}
    if k == "CCI":
        return {"cci": oracles.cci(ch["high"], ch["low"], ch["close"], w["n"], eps)}
    raise UsageError(f"no oracle for kind {k}")


def verify_replication(net, data, tol, oracle=None):
    """Compare every sliding-window output of ``net`` with the oracle.

    ``oracle`` may be a callable ``data -> {output: array}``; by default the
    oracle matching the network's kind is used. Oracle arrays are aligned to
    the end of the series, as are the network outputs.
    """
    if net.trained or not net.spec.init.replicates:
        raise UsageError("replication can only be verified on an untrained Replicate-initialized network")
    ch = _channels(data)
    expected = oracle(data) if oracle is not None else oracle_outputs(net.spec, data)
    if net.input_names == ("x",):
        got = net.run_series(x=ch["values"])
    else:
        got = net.run_series(**{c: ch[c] for c in net.input_names})
    worst, where, per = 0.0, 0, {}
    for name, exp in expected.items():
        g = got[name]
        # oracle warmup can be shorter than input_len - 1 (e.g. wider input than windows)
        exp = np.asarray(exp)[len(exp) - len(g):]
        if len(exp) != len(g):
            raise DimensionError(f"output {name!r}: network gave {len(g)} values, oracle {len(exp)}")
        err = np.abs(g - exp)
        per[name] = float(err.max())
        i = int(np.argmax(err))
        if err[i] > worst:
            worst, where = float(err[i]), i + net.input_len - 1
    return ReplicationReport(net.spec.kind, worst, where, tol, per)
