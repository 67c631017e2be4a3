"""Central-difference gradient checking and the per-operator sweep."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .graph import Graph, OpKind


def grad_check(graph, bindings, h=1e-5):
    """Largest relative error between backward() and central differences.

    The relative error of one entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    Every entry of every trainable parameter is perturbed.
    """
    if not h > 0:
        raise ConfigurationError(f"perturbation must be > 0, got {h}")
    if len(graph.outputs) != 1:
        raise UsageError("grad_check needs exactly one output")
    name = next(iter(graph.outputs))

    def f():
        out = graph.forward(bindings)[name]
        if out.size != 1:
            raise UsageError("grad_check needs a scalar output")
        return float(out.values[0])

    f()
    analytic = graph.backward()
    worst = 0.0
    for pid, p in graph.trainable_parameters().items():
        vals = p.tensor.values
        for j in range(vals.size):
            orig = vals[j]
            vals[j] = orig + h
            fp = f()
            vals[j] = orig - h
            fm = f()
            vals[j] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic[pid][j]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# sweep: random small graphs around each operator, kept away from kinks

_MARGIN = 1e-3


def _reduce(g, node, rng):
    """Feed a vector node into a fixed random WeightedSum so the output is scalar."""
    size = g.nodes[node].size
    if size == 1:
        return node
    w = g.parameter(rng.uniform(0.5, 1.5, size) * rng.choice([-1.0, 1.0], size), trainable=False)
    return g.add(OpKind.WEIGHTED_SUM, [w, node])


def _distinct(rng, n, gap):
    while True:
        x = rng.normal(0.0, 1.0, n)
        s = np.sort(x)
        if n < 2 or np.min(np.diff(s)) > gap:
            return x


def _case(kind, rng):
    g = Graph()
    n = int(rng.integers(2, 9))
    if kind is OpKind.WEIGHTED_SUM:
        k = int(rng.integers(1, 9))
        w = g.parameter(rng.normal(size=k))
        x = g.parameter(rng.normal(size=k))
        out = g.add(kind, [w, x])
    elif kind is OpKind.SUBTRACT:
        a = g.parameter(rng.normal(size=n))
        b = g.parameter(rng.normal(size=n))
        out = _reduce(g, g.add(kind, [a, b]), rng)
    elif kind is OpKind.DIV_BIAS:
        a = g.parameter(rng.normal(size=n))
        d = g.parameter(np.abs(rng.normal(size=n)) + 0.1)
        out = _reduce(g, g.add(kind, [a, d], eps=float(rng.choice([1e-8, 1e-3, 1.0]))), rng)
    elif kind is OpKind.CLIP:
        lo, hi = -0.5, 0.5
        x = rng.uniform(-1.5, 1.5, n)
        near = (np.abs(x - lo) < _MARGIN) | (np.abs(x - hi) < _MARGIN)
        x[near] += 10 * _MARGIN
        p = g.parameter(x)
        out = _reduce(g, g.add(kind, [p], lo=lo, hi=hi), rng)
    elif kind in (OpKind.MIN_POOL_1D, OpKind.MAX_POOL_1D):
        p = g.parameter(_distinct(rng, n, _MARGIN))
        out = _reduce(g, g.add(kind, [p], k=int(rng.integers(1, n + 1))), rng)
    elif kind is OpKind.MEAN:
        out = g.add(kind, [g.parameter(rng.normal(size=n))])
    elif kind is OpKind.MAD:
        while True:
            x = rng.normal(size=n)
            if np.min(np.abs(x - x.mean())) > _MARGIN:
                break
        out = g.add(kind, [g.parameter(x)])
    elif kind is OpKind.ACTIVATION:
        x = rng.normal(size=n)
        x[np.abs(x) < _MARGIN] += 10 * _MARGIN
        out = _reduce(g, g.add(kind, [g.parameter(x)], fn=str(rng.choice(["identity", "relu"]))), rng)
    else:  # pragma: no cover
        raise ConfigurationError(f"no sweep case for {kind}")
    g.set_output("y", out)
    return g


@dataclass
class SweepRow:
    kind: OpKind
    cases: int
    max_rel_error: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tol


def sweep(cases=100, h=1e-6, tol=1e-4, seed=0, kinds=None):
    """Run ``cases`` seeded random graphs per operator kind; one row per kind."""
    rows = []
    for idx, kind in enumerate(kinds or list(OpKind)):
        rng = np.random.default_rng([seed, idx])
        worst = 0.0
        for _ in range(cases):
            worst = max(worst, grad_check(_case(kind, rng), {}, h))
        rows.append(SweepRow(kind, cases, worst, tol))
    return rows
