import numpy as np
import pytest

from tinlab.errors import ConfigurationError, DimensionError, UsageError
from tinlab.gradcheck import grad_check, sweep
from tinlab.graph import Graph, OpKind
from tinlab.optim import adam_step, sgd_step


def one_param(values):
    g = Graph()
    pid = g.parameter(values)
    return g, pid


def test_sgd_examples():
    g, pid = one_param([1.0])
    sgd_step(g.parameters(), {pid: [2.0]}, lr=0.1)
    assert g.parameters()[pid].tensor.values[0] == pytest.approx(0.8, abs=1e-15)
    sgd_step(g.parameters(), {pid: [0.0]}, lr=0.1)
    assert g.parameters()[pid].tensor.values[0] == pytest.approx(0.8, abs=1e-15)
    assert g.parameters()[pid].step_count == 2


def test_adam_first_step():
    g, pid = one_param([0.0])
    adam_step(g.parameters(), {pid: [1.0]}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    p = g.parameters()[pid]
    assert p.tensor.values[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert p.step_count == 1
    assert p.m1.shape == p.m2.shape == p.tensor.values.shape


def test_optimizer_validation():
    g, pid = one_param([0.0, 1.0])
    with pytest.raises(DimensionError):
        sgd_step(g.parameters(), {pid: [1.0]}, lr=0.1)
    with pytest.raises(ConfigurationError):
        sgd_step(g.parameters(), {pid: [1.0, 1.0]}, lr=0.0)
    with pytest.raises(ConfigurationError):
        adam_step(g.parameters(), {pid: [1.0, 1.0]}, lr=0.1, beta1=1.0)
    with pytest.raises(ConfigurationError):
        adam_step(g.parameters(), {pid: [1.0, 1.0]}, lr=0.1, eps=0.0)


def test_non_trainable_parameters_untouched():
    g = Graph()
    pid = g.parameter([1.0], trainable=False)
    sgd_step(g.parameters(), {pid: [5.0]}, lr=1.0)
    assert g.parameters()[pid].tensor.values[0] == 1.0


def test_optimizer_determinism():
    rng = np.random.default_rng(0)
    w0, grads = rng.normal(size=20), rng.normal(size=(5, 20))
    finals = []
    for _ in range(2):
        g, pid = one_param(w0.copy())
        for gr in grads:
            adam_step(g.parameters(), {pid: gr}, lr=0.01)
        finals.append(g.parameters()[pid].tensor.values.copy())
    assert finals[0].tobytes() == finals[1].tobytes()


def linear_graph():
    rng = np.random.default_rng(2)
    g = Graph()
    x = g.input("x", 5)
    w = g.parameter(rng.normal(size=5))
    a = g.add(OpKind.WEIGHTED_SUM, [w, x])
    g.set_output("y", g.add(OpKind.SUBTRACT, [a, g.add(OpKind.MEAN, [x])]))
    return g, {"x": rng.normal(size=5)}


def test_grad_check_linear_graph():
    g, b = linear_graph()
    assert grad_check(g, b, h=1e-5) <= 1e-9


def test_grad_check_div_bias_and_interior_clip():
    g = Graph()
    num = g.parameter([0.7, -1.2])
    den = g.parameter([0.5, 2.0])
    c = g.add(OpKind.CLIP, [g.add(OpKind.DIV_BIAS, [num, den], eps=1e-8)], lo=-10, hi=10)
    g.set_output("y", g.add(OpKind.MEAN, [c]))
    assert grad_check(g, {}, h=1e-6) <= 1e-4
    g2 = Graph()
    x = g2.parameter([0.3, 0.6])
    g2.set_output("y", g2.add(OpKind.MEAN, [g2.add(OpKind.CLIP, [x], lo=0, hi=1)]))
    assert grad_check(g2, {}, h=1e-6) <= 1e-6


def test_grad_check_requires_scalar_output():
    g = Graph()
    x = g.parameter([1.0, 2.0])
    g.set_output("y", g.add(OpKind.ACTIVATION, [x]))
    with pytest.raises(UsageError):
        grad_check(g, {})
    with pytest.raises(ConfigurationError):
        grad_check(g, {}, h=0.0)


def test_sweep_small():
    rows = sweep(cases=10)
    assert {r.kind for r in rows} == set(OpKind)
    assert all(r.passed for r in rows)


def test_sweep_coarse_step_fails():
    rows = sweep(cases=20, h=1e-1)
    assert not all(r.passed for r in rows)
