"""Reverse-mode differentiation over a small, fixed operator set.

A :class:`Graph` holds three kinds of ids in one integer namespace:

* input slots, bound by name at ``forward`` time,
* :class:`Parameter` leaves (trainable or fixed weights),
* operator :class:`Node` s whose ``kind`` is an :class:`OpKind`.

Every value flowing through a graph is one-dimensional. A node input may be
a plain id or a port ``(id, start, stop)`` that reads a contiguous slice of
the source; slicing is wiring, not an operator. Operators that reduce a
vector (WeightedSum, MinPool1D, MaxPool1D, Mean, MAD) read the concatenation
of all their data inputs, which is how a neuron with many incoming edges is
expressed.

``forward_batch`` evaluates many bindings at once along a leading batch
axis; parameters are shared across the batch and their gradients are summed.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .errors import ConfigurationError, DimensionError, DomainError, FormatError, UsageError

__all__ = [
    "Tensor",
    "OpKind",
    "Node",
    "Parameter",
    "InputSlot",
    "Graph",
    "ACTIVATIONS",
    "weighted_sum",
    "subtract",
    "div_bias",
    "clip",
    "minpool1d",
    "maxpool1d",
    "mean",
    "mad",
    "dump_parameters",
    "load_parameters",
]

ACTIVATIONS = ("identity", "relu")


def _as_vector(data):
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


@dataclass(eq=False)
class Tensor:
    """Row-major float64 array with an optional gradient buffer."""

    shape: tuple
    values: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if not self.shape or any(s < 1 for s in self.shape):
            raise DimensionError(f"shape must be a non-empty sequence of positive ints, got {self.shape}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.size != math.prod(self.shape):
            raise DimensionError(
                f"shape {self.shape} needs {math.prod(self.shape)} values, got {self.values.size}"
            )
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float64).reshape(-1)
            if self.grad.size != self.values.size:
                raise DimensionError("grad length differs from values length")

    @classmethod
    def of(cls, data):
        arr = _as_vector(data)
        return cls(arr.shape, arr.reshape(-1))

    @property
    def size(self):
        return self.values.size

    def array(self):
        return self.values.reshape(self.shape)

    def tolist(self):
        return self.array().tolist()


class OpKind(enum.Enum):
    WEIGHTED_SUM = "WeightedSum"
    SUBTRACT = "Subtract"
    DIV_BIAS = "DivBias"
    CLIP = "Clip"
    MIN_POOL_1D = "MinPool1D"
    MAX_POOL_1D = "MaxPool1D"
    MEAN = "Mean"
    MAD = "MAD"
    ACTIVATION = "Activation"


@dataclass(eq=False)
class Parameter:
    """A weight vector plus optimizer state."""

    tensor: Tensor
    trainable: bool = True
    name: str = ""
    m1: np.ndarray | None = None
    m2: np.ndarray | None = None
    step_count: int = 0

    @classmethod
    def of(cls, data, trainable=True, name=""):
        return cls(Tensor.of(data), trainable=trainable, name=name)

    @property
    def values(self):
        return self.tensor.values


@dataclass(eq=False)
class InputSlot:
    name: str
    size: int


@dataclass(eq=False)
class Node:
    id: int
    kind: OpKind
    inputs: tuple
    attrs: dict = field(default_factory=dict)
    slices: tuple = ()
    size: int = 0
    output: Tensor | None = None


def _port(spec):
    if isinstance(spec, tuple):
        if len(spec) != 3:
            raise ConfigurationError(f"port must be (id, start, stop), got {spec!r}")
        return int(spec[0]), (int(spec[1]), int(spec[2]))
    return int(spec), None


# ---------------------------------------------------------------------------
# operator kernels: forward returns (out, cache); backward returns input grads
# all arrays are 2-D (batch, n); parameter operands have batch 1


def _fwd_weighted_sum(args, attrs):
    w, x = args
    if w.shape[0] == 1:
        out = x @ w[0]
    else:
        out = np.einsum("bi,bi->b", x, w)
    return out[:, None], None


def _bwd_weighted_sum(args, attrs, cache, g):
    w, x = args
    return [g * x, g * w]


def _fwd_subtract(args, attrs):
    a, b = args
    return a - b, None


def _bwd_subtract(args, attrs, cache, g):
    return [g, -g]


def _fwd_div_bias(args, attrs):
    num, den = args
    if (den < 0.0).any():
        raise DomainError("div_bias denominator must be nonnegative")
    shifted = den + attrs["eps"]
    return num / shifted, shifted


def _bwd_div_bias(args, attrs, shifted, g):
    num, _ = args
    return [g / shifted, -g * num / (shifted * shifted)]


def _fwd_clip(args, attrs):
    (x,) = args
    return np.clip(x, attrs["lo"], attrs["hi"]), None


def _bwd_clip(args, attrs, cache, g):
    (x,) = args
    inside = (x > attrs["lo"]) & (x < attrs["hi"])
    return [g * inside]


def _make_pool(is_max):
    def fwd(args, attrs):
        (x,) = args
        vals, idx = kernels.sliding_extrema(x, attrs["k"], is_max)
        return vals, idx

    def bwd(args, attrs, idx, g):
        (x,) = args
        gx = np.zeros((g.shape[0], x.shape[1]))
        rows = np.arange(g.shape[0])[:, None]
        np.add.at(gx, (np.broadcast_to(rows, idx.shape), idx), g)
        return [gx]

    return fwd, bwd


def _fwd_mean(args, attrs):
    (x,) = args
    return x.mean(axis=1, keepdims=True), None


def _bwd_mean(args, attrs, cache, g):
    (x,) = args
    return [np.broadcast_to(g / x.shape[1], x.shape)]


def _fwd_mad(args, attrs):
    (x,) = args
    dev = x - x.mean(axis=1, keepdims=True)
    return np.abs(dev).mean(axis=1, keepdims=True), np.sign(dev)


def _bwd_mad(args, attrs, sign, g):
    n = sign.shape[1]
    centered = sign - sign.mean(axis=1, keepdims=True)
    return [g * centered / n]


def _fwd_activation(args, attrs):
    (x,) = args
    if attrs["fn"] == "relu":
        return np.maximum(x, 0.0), None
    return x, None


def _bwd_activation(args, attrs, cache, g):
    (x,) = args
    if attrs["fn"] == "relu":
        return [g * (x > 0.0)]
    return [g]


_minfwd, _minbwd = _make_pool(False)
_maxfwd, _maxbwd = _make_pool(True)

_OPS = {
    OpKind.WEIGHTED_SUM: (_fwd_weighted_sum, _bwd_weighted_sum),
    OpKind.SUBTRACT: (_fwd_subtract, _bwd_subtract),
    OpKind.DIV_BIAS: (_fwd_div_bias, _bwd_div_bias),
    OpKind.CLIP: (_fwd_clip, _bwd_clip),
    OpKind.MIN_POOL_1D: (_minfwd, _minbwd),
    OpKind.MAX_POOL_1D: (_maxfwd, _maxbwd),
    OpKind.MEAN: (_fwd_mean, _bwd_mean),
    OpKind.MAD: (_fwd_mad, _bwd_mad),
    OpKind.ACTIVATION: (_fwd_activation, _bwd_activation),
}

# ops whose data operands are concatenated into one vector
_CONCAT = {OpKind.WEIGHTED_SUM, OpKind.MIN_POOL_1D, OpKind.MAX_POOL_1D, OpKind.MEAN, OpKind.MAD}
_ARITY = {OpKind.SUBTRACT: 2, OpKind.DIV_BIAS: 2, OpKind.CLIP: 1, OpKind.ACTIVATION: 1}


def _check_attrs(kind, attrs):
    attrs = dict(attrs)
    if kind is OpKind.DIV_BIAS:
        eps = float(attrs.get("eps", 1e-8))
        if not eps > 0.0:
            raise ConfigurationError(f"div_bias eps must be > 0, got {eps}")
        attrs["eps"] = eps
    elif kind is OpKind.CLIP:
        lo, hi = float(attrs["lo"]), float(attrs["hi"])
        if not lo < hi:
            raise ConfigurationError(f"clip needs lo < hi, got lo={lo}, hi={hi}")
        attrs["lo"], attrs["hi"] = lo, hi
    elif kind in (OpKind.MIN_POOL_1D, OpKind.MAX_POOL_1D):
        k = int(attrs["k"])
        if k < 1:
            raise ConfigurationError(f"pool window must be >= 1, got {k}")
        attrs["k"] = k
    elif kind is OpKind.ACTIVATION:
        fn = attrs.get("fn", "identity")
        if fn not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {fn!r}; expected one of {ACTIVATIONS}")
        attrs["fn"] = fn
    return attrs


class Graph:
    """A DAG of operator nodes over named inputs and parameters."""

    def __init__(self):
        self._next_id = 0
        self._inputs: dict[int, InputSlot] = {}
        self._params: dict[int, Parameter] = {}
        self._nodes: dict[int, Node] = {}
        self._order: list[int] = []
        self.outputs: dict[str, int] = {}
        self._cache = None

    # -- construction ------------------------------------------------------

    def _new_id(self):
        i = self._next_id
        self._next_id += 1
        return i

    def input(self, name, size):
        if any(s.name == name for s in self._inputs.values()):
            raise ConfigurationError(f"duplicate input name {name!r}")
        size = int(size)
        if size < 1:
            raise DimensionError(f"input {name!r} must have size >= 1")
        i = self._new_id()
        self._inputs[i] = InputSlot(name, size)
        self._cache = None
        return i

    def parameter(self, values, trainable=True, name=""):
        if isinstance(values, Parameter):
            param = values
        else:
            param = Parameter.of(values, trainable=trainable, name=name)
        if len(param.tensor.shape) != 1:
            raise DimensionError("graph parameters must be one-dimensional")
        i = self._new_id()
        self._params[i] = param
        self._cache = None
        return i

    def add(self, kind, inputs, **attrs):
        """Append an operator node; returns its id."""
        kind = OpKind(kind)
        node = Node(self._new_id(), kind, (), _check_attrs(kind, attrs))
        self._wire(node, inputs)
        self._nodes[node.id] = node
        self._order = self._toposort()
        self._cache = None
        return node.id

    def rewire(self, node_id, inputs):
        """Replace a node's inputs; rejected if it would create a cycle."""
        node = self._nodes[node_id]
        saved = (node.inputs, node.slices, node.size)
        self._wire(node, inputs)
        try:
            self._order = self._toposort()
        except ConfigurationError:
            node.inputs, node.slices, node.size = saved
            raise
        self._cache = None

    def set_output(self, name, node_id):
        if node_id not in self._nodes and node_id not in self._inputs and node_id not in self._params:
            raise ConfigurationError(f"unknown id {node_id}")
        self.outputs[name] = node_id

    def _size_of(self, i):
        if i in self._nodes:
            return self._nodes[i].size
        if i in self._inputs:
            return self._inputs[i].size
        if i in self._params:
            return self._params[i].tensor.size
        raise ConfigurationError(f"input id {i} does not exist in the graph")

    def _wire(self, node, inputs):
        ids, slices, sizes = [], [], []
        for spec in inputs:
            i, sl = _port(spec)
            n = self._size_of(i)
            if sl is not None:
                start, stop = sl
                if not 0 <= start < stop <= n:
                    raise DimensionError(f"slice [{start}:{stop}] out of range for id {i} of size {n}")
                n = stop - start
            ids.append(i)
            slices.append(sl)
            sizes.append(n)
        kind = node.kind
        if kind in _ARITY and len(ids) != _ARITY[kind]:
            raise ConfigurationError(f"{kind.value} takes {_ARITY[kind]} inputs, got {len(ids)}")
        if kind is OpKind.WEIGHTED_SUM:
            if len(ids) < 2:
                raise ConfigurationError("WeightedSum needs a weight input and at least one data input")
            if sizes[0] != sum(sizes[1:]):
                raise DimensionError(f"WeightedSum weight length {sizes[0]} != data length {sum(sizes[1:])}")
            size = 1
        elif kind in (OpKind.SUBTRACT, OpKind.DIV_BIAS):
            if sizes[0] != sizes[1]:
                raise DimensionError(f"{kind.value} operand sizes differ: {sizes[0]} vs {sizes[1]}")
            size = sizes[0]
        elif kind in (OpKind.CLIP, OpKind.ACTIVATION):
            size = sizes[0]
        else:
            if not ids:
                raise DimensionError(f"{kind.value} needs at least one input")
            n = sum(sizes)
            if kind in (OpKind.MIN_POOL_1D, OpKind.MAX_POOL_1D):
                if node.attrs["k"] > n:
                    raise DimensionError(f"pool window {node.attrs['k']} exceeds input length {n}")
                size = n - node.attrs["k"] + 1
            else:
                size = 1
        node.inputs, node.slices, node.size = tuple(ids), tuple(slices), size

    def _toposort(self):
        indeg = {i: 0 for i in self._nodes}
        users = {i: [] for i in self._nodes}
        for node in self._nodes.values():
            for src in set(node.inputs):
                if src in self._nodes:
                    indeg[node.id] += 1
                    users[src].append(node.id)
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            i = ready.pop(0)
            order.append(i)
            for u in sorted(users[i]):
                indeg[u] -= 1
                if indeg[u] == 0:
                    ready.append(u)
            ready.sort()
        if len(order) != len(self._nodes):
            raise ConfigurationError("graph contains a cycle")
        return order

    # -- introspection -----------------------------------------------------

    @property
    def nodes(self):
        return dict(self._nodes)

    @property
    def order(self):
        return list(self._order)

    def inputs(self):
        return {s.name: s.size for s in self._inputs.values()}

    def parameters(self):
        return dict(self._params)

    def trainable_parameters(self):
        return {i: p for i, p in self._params.items() if p.trainable}

    def signature(self):
        """Structural fingerprint: node kinds, edge multiset and attributes."""
        edges = sorted(
            (src, n.id, n.slices[j]) if n.slices[j] is not None else (src, n.id, None)
            for n in self._nodes.values()
            for j, src in enumerate(n.inputs)
        )
        nodes = tuple((n.id, n.kind.value, tuple(sorted(n.attrs.items()))) for n in self._nodes.values())
        leaves = tuple(
            (i, "input", s.name, s.size) for i, s in sorted(self._inputs.items())
        ) + tuple((i, "param", p.tensor.size, p.trainable) for i, p in sorted(self._params.items()))
        return {"nodes": nodes, "edges": tuple(edges), "leaves": leaves,
                "outputs": tuple(sorted(self.outputs.items()))}

    # -- evaluation --------------------------------------------------------

    def _gather(self, vals, ids, slices, batch):
        parts = []
        for i, sl in zip(ids, slices):
            v = vals[i]
            if sl is not None:
                v = v[:, sl[0]:sl[1]]
            parts.append(v)
        return parts

    def _run(self, leaf_vals, batch):
        vals = dict(leaf_vals)
        caches = {}
        for nid in self._order:
            node = self._nodes[nid]
            parts = self._gather(vals, node.inputs, node.slices, batch)
            if node.kind is OpKind.WEIGHTED_SUM:
                args = [parts[0], _concat(parts[1:], batch)]
            elif node.kind in _CONCAT:
                args = [_concat(parts, batch)]
            else:
                args = parts
            out, cache = _OPS[node.kind][0](args, node.attrs)
            if not np.isfinite(out).all():
                raise DomainError(f"non-finite value produced by node {nid} ({node.kind.value})")
            vals[nid] = out
            caches[nid] = (args, cache)
        return vals, caches

    def _leaf_values(self, bindings, batched):
        leaf = {}
        batch = None
        names = {s.name: i for i, s in self._inputs.items()}
        unknown = set(bindings) - set(names)
        if unknown:
            raise UsageError(f"unknown input names: {sorted(unknown)}")
        for name, i in names.items():
            if name not in bindings:
                raise UsageError(f"input {name!r} is not bound")
            arr = np.asarray(bindings[name], dtype=np.float64)
            want = self._inputs[i].size
            if batched:
                if arr.ndim != 2 or arr.shape[1] != want:
                    raise DimensionError(f"input {name!r} expects shape (batch, {want}), got {arr.shape}")
                if batch is None:
                    batch = arr.shape[0]
                elif arr.shape[0] != batch:
                    raise DimensionError("batched inputs disagree on batch size")
            else:
                if arr.reshape(-1).size != want or arr.ndim > 1 and arr.shape != (want,):
                    raise DimensionError(f"input {name!r} expects {want} values, got shape {arr.shape}")
                arr = arr.reshape(1, want)
            if not np.isfinite(arr).all():
                raise DomainError(f"input {name!r} contains non-finite values")
            leaf[i] = arr
        for i, p in self._params.items():
            leaf[i] = p.tensor.values[None, :]
        return leaf, (batch or 1)

    def forward(self, bindings):
        """Evaluate every node for one set of bindings.

        Returns ``{output name: Tensor}`` and records each node's output.
        """
        leaf, batch = self._leaf_values(bindings, batched=False)
        vals, caches = self._run(leaf, batch)
        self._cache = (vals, caches, batch, False)
        for nid, node in self._nodes.items():
            node.output = Tensor((node.size,), vals[nid][0])
        return {name: Tensor((vals[i].shape[1],), vals[i][0]) for name, i in self.outputs.items()}

    def forward_batch(self, bindings):
        """Evaluate a batch; each binding has shape ``(batch, size)``."""
        leaf, batch = self._leaf_values(bindings, batched=True)
        vals, caches = self._run(leaf, batch)
        self._cache = (vals, caches, batch, True)
        return {name: np.broadcast_to(vals[i], (batch, vals[i].shape[1])).copy()
                for name, i in self.outputs.items()}

    def backward(self, seed=None):
        """Accumulate gradients in reverse topological order.

        ``seed`` is the upstream gradient of the outputs: a Tensor or array
        when the graph has one output, otherwise ``{output name: seed}``.
        ``None`` means ones for a single output. Returns ``{parameter id:
        gradient}`` for trainable parameters only.
        """
        if self._cache is None:
            raise UsageError("backward called before forward (or graph changed since)")
        vals, caches, batch, batched = self._cache
        if seed is None:
            if len(self.outputs) != 1:
                raise UsageError("an explicit seed is required for graphs with several outputs")
            name = next(iter(self.outputs))
            seed = {name: np.ones((batch, vals[self.outputs[name]].shape[1]))}
        elif not isinstance(seed, Mapping):
            if len(self.outputs) != 1:
                raise UsageError("seed must be a mapping for graphs with several outputs")
            seed = {next(iter(self.outputs)): seed}

        grads: dict[int, np.ndarray] = {}
        for name, s in seed.items():
            if name not in self.outputs:
                raise UsageError(f"unknown output {name!r}")
            oid = self.outputs[name]
            arr = s.values if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
            width = vals[oid].shape[1]
            arr = arr.reshape(batch, width) if batched else arr.reshape(1, width)
            _accumulate(grads, oid, arr, None, vals[oid].shape)

        for nid in reversed(self._order):
            g = grads.get(nid)
            if g is None:
                continue
            node = self._nodes[nid]
            args, cache = caches[nid]
            in_grads = _OPS[node.kind][1](args, node.attrs, cache, g)
            if node.kind is OpKind.WEIGHTED_SUM:
                per_port = [in_grads[0]] + _split(in_grads[1], node, vals, start=1)
            elif node.kind in _CONCAT:
                per_port = _split(in_grads[0], node, vals, start=0)
            else:
                per_port = in_grads
            for src, sl, pg in zip(node.inputs, node.slices, per_port):
                _accumulate(grads, src, pg, sl, vals[src].shape)

        self.input_grads = {s.name: grads.get(i, np.zeros_like(vals[i])) for i, s in self._inputs.items()}
        out = {}
        for i, p in self._params.items():
            g = grads.get(i)
            g = np.zeros(p.tensor.size) if g is None else g.reshape(-1).copy()
            if p.trainable:
                p.tensor.grad = g
                out[i] = g
        return out


def _concat(parts, batch):
    if len(parts) == 1:
        return parts[0]
    rows = max(p.shape[0] for p in parts)
    return np.concatenate([np.broadcast_to(p, (rows, p.shape[1])) for p in parts], axis=1)


def _split(g, node, vals, start):
    sizes = []
    for src, sl in zip(node.inputs[start:], node.slices[start:]):
        sizes.append(sl[1] - sl[0] if sl is not None else vals[src].shape[1])
    cuts = np.cumsum(sizes)[:-1]
    return np.split(g, cuts, axis=1)


def _accumulate(grads, src, g, sl, src_shape):
    if src_shape[0] == 1 and g.shape[0] > 1:
        g = g.sum(axis=0, keepdims=True)
    if sl is not None:
        full = np.zeros((g.shape[0], src_shape[1]))
        full[:, sl[0]:sl[1]] = g
        g = full
    prev = grads.get(src)
    grads[src] = g.copy() if prev is None else prev + g


# ---------------------------------------------------------------------------
# eager single-op helpers


def _single(kind, operands, **attrs):
    g = Graph()
    ids = []
    for t in operands:
        if isinstance(t, Tensor):
            t = Parameter(t)
        ids.append(g.parameter(t))
    out = g.add(kind, ids, **attrs)
    g.set_output("out", out)
    return g.forward({})["out"]


def weighted_sum(x, w):
    return _single(OpKind.WEIGHTED_SUM, [w, x])


def subtract(a, b):
    return _single(OpKind.SUBTRACT, [a, b])


def div_bias(num, den, eps):
    return _single(OpKind.DIV_BIAS, [num, den], eps=eps)


def clip(x, lo, hi):
    return _single(OpKind.CLIP, [x], lo=lo, hi=hi)


def minpool1d(x, k):
    return _single(OpKind.MIN_POOL_1D, [x], k=k)


def maxpool1d(x, k):
    return _single(OpKind.MAX_POOL_1D, [x], k=k)


def mean(x):
    return _single(OpKind.MEAN, [x])


def mad(x):
    return _single(OpKind.MAD, [x])


# ---------------------------------------------------------------------------
# parameter serialization

_HEADER = "# tinlab-parameters v1"


def dump_parameters(graph):
    """Text export: one line per parameter, ``id name size trainable values...``.

    Values use 17 significant digits, which round-trips float64 exactly.
    """
    lines = [_HEADER]
    for i, p in sorted(graph.parameters().items()):
        name = p.name or "-"
        if any(c.isspace() for c in name):
            raise FormatError(f"parameter name {name!r} contains whitespace")
        vals = " ".join(f"{v:.17e}" for v in p.tensor.values)
        lines.append(f"{i} {name} {p.tensor.size} {int(p.trainable)} {vals}")
    return "\n".join(lines) + "\n"


def load_parameters(graph, text):
    """Overwrite ``graph``'s parameter values from :func:`dump_parameters` text."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != _HEADER:
        raise FormatError("missing parameter file header")
    params = graph.parameters()
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split()
        try:
            pid, size = int(fields[0]), int(fields[2])
            values = np.array([float(v) for v in fields[4:]], dtype=np.float64)
        except (ValueError, IndexError) as exc:
            raise FormatError(f"line {lineno}: malformed parameter record") from exc
        if pid not in params:
            raise FormatError(f"line {lineno}: graph has no parameter {pid}")
        if values.size != size or size != params[pid].tensor.size:
            raise DimensionError(f"line {lineno}: parameter {pid} size mismatch")
        params[pid].tensor.values[:] = values
        seen.add(pid)
    missing = set(params) - seen
    if missing:
        raise FormatError(f"parameters missing from file: {sorted(missing)}")
    graph._cache = None
