import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tinlab.errors import ConfigurationError, DimensionError, DomainError, FormatError, UsageError
from tinlab.graph import (Graph, OpKind, Parameter, Tensor, clip, div_bias, dump_parameters, load_parameters,
                          mad, maxpool1d, mean, minpool1d, subtract, weighted_sum)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vec(n_min=1, n_max=30):
    return arrays(np.float64, st.integers(n_min, n_max), elements=finite)


# --- tensors -----------------------------------------------------------------


def test_tensor_shape_must_match_values():
    with pytest.raises(DimensionError):
        Tensor((2, 2), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        Tensor((0,), [])
    with pytest.raises(DimensionError):
        Tensor((2,), [1.0, 2.0], grad=[1.0])
    t = Tensor((2, 3), np.arange(6.0))
    assert t.size == 6 and t.array().shape == (2, 3)


# --- single-op examples ----------------------------------------------------------


def test_weighted_sum_examples():
    assert weighted_sum([1, 2, 3], [1 / 3, 1 / 3, 1 / 3]).values[0] == pytest.approx(2.0, abs=1e-15)
    assert weighted_sum([1, 2], [0.25, 0.75]).values[0] == 1.75
    with pytest.raises(DimensionError):
        weighted_sum([1, 2], [1.0])


def test_weighted_sum_backward():
    g = Graph()
    w = g.parameter([0.3, -0.2])
    x = g.parameter([5.0, 7.0], trainable=False)
    g.set_output("y", g.add(OpKind.WEIGHTED_SUM, [w, x]))
    g.forward({})
    np.testing.assert_array_equal(g.backward(1.0)[w], [5.0, 7.0])


def test_subtract_examples():
    np.testing.assert_array_equal(subtract([3], [3]).values, [0.0])
    np.testing.assert_array_equal(subtract([5, 1], [2, 4]).values, [3.0, -3.0])
    with pytest.raises(DimensionError):
        subtract([1, 2], [1])
    g = Graph()
    a, b = g.parameter([5.0, 1.0]), g.parameter([2.0, 4.0])
    g.set_output("y", g.add(OpKind.SUBTRACT, [a, b]))
    g.forward({})
    grads = g.backward([1.0, 1.0])
    np.testing.assert_array_equal(grads[a], [1, 1])
    np.testing.assert_array_equal(grads[b], [-1, -1])


def test_div_bias_examples():
    assert div_bias([1], [0], 1e-8).values[0] == pytest.approx(1e8)
    assert div_bias([0], [5], 1e-8).values[0] == 0.0
    assert div_bias([3], [1], 1.0).values[0] == 1.5
    with pytest.raises(ConfigurationError):
        div_bias([1], [1], 0.0)
    with pytest.raises(DomainError):
        div_bias([1], [-1], 1e-8)


def test_div_bias_gradient_of_reciprocal():
    g = Graph()
    num = g.parameter([1.0], trainable=False)
    d = g.parameter([1.0])
    g.set_output("y", g.add(OpKind.DIV_BIAS, [num, d], eps=1.0))
    g.forward({})
    assert g.backward()[d][0] == pytest.approx(-0.25, abs=1e-15)


def test_clip_examples():
    np.testing.assert_array_equal(clip([-5, 50, 150], 0, 100).values, [0, 50, 100])
    np.testing.assert_array_equal(clip([0.5], 0, 1).values, [0.5])
    with pytest.raises(ConfigurationError):
        clip([1.0], 1, 1)
    g = Graph()
    x = g.parameter([-5.0, 50.0, 150.0, 0.0, 100.0])
    g.set_output("y", g.add(OpKind.CLIP, [x], lo=0, hi=100))
    g.forward({})
    # boundary values get gradient 0
    np.testing.assert_array_equal(g.backward(np.ones(5))[x], [0, 1, 0, 0, 0])


def test_pool_examples():
    np.testing.assert_array_equal(minpool1d([3, 1, 2, 5, 4], 3).values, [1, 1, 2])
    np.testing.assert_array_equal(maxpool1d([3, 1, 2, 5, 4], 3).values, [3, 5, 5])
    np.testing.assert_array_equal(minpool1d([3, 1, 2], 1).values, [3, 1, 2])
    with pytest.raises(DimensionError):
        maxpool1d([1, 2], 3)
    with pytest.raises(ConfigurationError):
        maxpool1d([1, 2], 0)


def test_pool_ties_route_to_first_index():
    g = Graph()
    x = g.parameter([2.0, 5.0, 5.0, 1.0])
    g.set_output("y", g.add(OpKind.MAX_POOL_1D, [x], k=3))
    g.forward({})
    np.testing.assert_array_equal(g.backward([1.0, 1.0])[x], [0, 2, 0, 0])


def test_mean_and_mad_examples():
    assert mean([1, 2, 3]).values[0] == 2.0
    assert mad([1, 2, 3]).values[0] == pytest.approx(2 / 3, abs=1e-15)
    assert mad([4.2, 4.2, 4.2]).values[0] == 0.0
    assert mean([5]).values[0] == 5.0 and mad([5]).values[0] == 0.0


def test_mad_gradient_uses_zero_sign_at_mean():
    g = Graph()
    x = g.parameter([1.0, 2.0, 3.0])
    g.set_output("y", g.add(OpKind.MAD, [x]))
    g.forward({})
    np.testing.assert_allclose(g.backward()[x], [-1 / 3, 0.0, 1 / 3], atol=1e-15)


def test_activation_rejects_unknown():
    g = Graph()
    x = g.parameter([1.0])
    with pytest.raises(ConfigurationError):
        g.add(OpKind.ACTIVATION, [x], fn="tanh")


# --- graph plumbing ------------------------------------------------------------------


def test_chained_subtract_and_inputs():
    g = Graph()
    a, b = g.input("a", 1), g.input("b", 1)
    g.set_output("y", g.add(OpKind.SUBTRACT, [g.add(OpKind.SUBTRACT, [a, b]), b]))
    assert g.forward({"a": [4.0], "b": [1.0]})["y"].values[0] == 2.0


def test_forward_errors():
    g = Graph()
    a = g.input("a", 2)
    g.set_output("y", g.add(OpKind.MEAN, [a]))
    with pytest.raises(UsageError):
        g.backward()
    with pytest.raises(UsageError):
        g.forward({})
    with pytest.raises(UsageError):
        g.forward({"a": [1.0, 2.0], "zzz": [1.0]})
    with pytest.raises(DimensionError):
        g.forward({"a": [1.0, 2.0, 3.0]})


def test_nonfinite_output_is_a_domain_error():
    g = Graph()
    a = g.input("a", 1)
    g.set_output("y", g.add(OpKind.MEAN, [a]))
    with pytest.raises(DomainError):
        g.forward({"a": [np.inf]})


def test_slices_and_multi_input_concat():
    g = Graph()
    x = g.input("x", 4)
    lo = g.add(OpKind.MIN_POOL_1D, [(x, 0, 2), (x, 2, 4)], k=4)
    g.set_output("lo", lo)
    assert g.forward({"x": [3.0, 1.0, 2.0, 0.5]})["lo"].values[0] == 0.5
    with pytest.raises(DimensionError):
        g.add(OpKind.MEAN, [(x, 3, 6)])


def test_cycle_rejected_and_rollback():
    g = Graph()
    x = g.parameter([1.0, 2.0])
    a = g.add(OpKind.ACTIVATION, [x])
    b = g.add(OpKind.ACTIVATION, [a])
    with pytest.raises(ConfigurationError):
        g.rewire(a, [b])
    assert g.order.index(a) < g.order.index(b)
    g.set_output("y", g.add(OpKind.MEAN, [b]))
    assert g.forward({})["y"].values[0] == 1.5


def test_unknown_input_id():
    g = Graph()
    with pytest.raises(ConfigurationError):
        g.add(OpKind.MEAN, [42])


def test_non_trainable_gradients_discarded():
    g = Graph()
    w = g.parameter([2.0])
    x = g.parameter([2.0], trainable=False)
    g.set_output("y", g.add(OpKind.WEIGHTED_SUM, [w, x]))
    g.forward({})
    grads = g.backward()
    assert set(grads) == {w}
    assert grads[w][0] == 2.0


def test_forward_batch_matches_single_rows():
    rng = np.random.default_rng(0)
    g = Graph()
    x = g.input("x", 6)
    w = g.parameter(rng.normal(size=6))
    ws = g.add(OpKind.WEIGHTED_SUM, [w, x])
    mx = g.add(OpKind.MAX_POOL_1D, [x], k=3)
    g.set_output("ws", ws)
    g.set_output("mx", mx)
    batch = rng.normal(size=(5, 6))
    out = g.forward_batch({"x": batch})
    for r in range(5):
        single = g.forward({"x": batch[r]})
        # BLAS may reorder the dot product, so allow rounding differences
        np.testing.assert_allclose(out["ws"][r], single["ws"].values, rtol=1e-14, atol=1e-15)
        np.testing.assert_array_equal(out["mx"][r], single["mx"].values)


def test_batch_parameter_gradient_is_sum_over_rows():
    rng = np.random.default_rng(1)
    g = Graph()
    x = g.input("x", 3)
    w = g.parameter(rng.normal(size=3))
    g.set_output("y", g.add(OpKind.WEIGHTED_SUM, [w, x]))
    batch = rng.normal(size=(4, 3))
    g.forward_batch({"x": batch})
    np.testing.assert_allclose(g.backward(np.ones((4, 1)))[w], batch.sum(axis=0), atol=1e-15)


def test_signature_reflects_structure():
    def make(k):
        g = Graph()
        x = g.input("x", 5)
        g.set_output("y", g.add(OpKind.MAX_POOL_1D, [x], k=k))
        return g

    assert make(2).signature() == make(2).signature()
    assert make(2).signature() != make(3).signature()


# --- serialization ----------------------------------------------------------------------


def test_parameter_dump_round_trip_is_exact():
    rng = np.random.default_rng(3)
    g = Graph()
    a = g.parameter(rng.normal(size=7) * 1e-7, name="a")
    b = g.parameter(rng.normal(size=3) * 1e9, trainable=False, name="b")
    text = dump_parameters(g)
    saved = {i: p.tensor.values.copy() for i, p in g.parameters().items()}
    for p in g.parameters().values():
        p.tensor.values[:] = 0.0
    load_parameters(g, text)
    for i in (a, b):
        np.testing.assert_array_equal(g.parameters()[i].tensor.values, saved[i])
    with pytest.raises(FormatError):
        load_parameters(g, "no header\n")


# --- properties ------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_linearity_of_linear_graphs(data):
    n = data.draw(st.integers(2, 12))
    x = data.draw(arrays(np.float64, n, elements=finite))
    y = data.draw(arrays(np.float64, n, elements=finite))
    alpha = data.draw(st.floats(-10, 10))
    w = data.draw(arrays(np.float64, n, elements=st.floats(-1, 1)))
    g = Graph()
    inp = g.input("x", n)
    ws = g.add(OpKind.WEIGHTED_SUM, [g.parameter(w), inp])
    m = g.add(OpKind.MEAN, [inp])
    g.set_output("y", g.add(OpKind.SUBTRACT, [ws, m]))

    def f(v):
        return g.forward({"x": v})["y"].values[0]

    assert abs(f(alpha * x) - alpha * f(x)) <= 1e-12 * max(1.0, abs(alpha)) * 1e3
    assert abs(f(x + y) - (f(x) + f(y))) <= 1e-12 * 1e3


@settings(max_examples=200, deadline=None)
@given(vec(1, 50), st.data())
def test_pool_matches_brute_force(x, data):
    k = data.draw(st.integers(1, len(x)))
    lo = minpool1d(x, k).values
    hi = maxpool1d(x, k).values
    for i in range(len(x) - k + 1):
        assert lo[i] == min(x[i:i + k])
        assert hi[i] == max(x[i:i + k])


@settings(max_examples=200, deadline=None)
@given(vec())
def test_mad_nonnegative_and_zero_iff_constant(x):
    m = mad(x).values[0]
    assert m >= 0
    if np.all(x == x[0]):
        assert m <= 1e-12
    else:
        assert m > 0


def test_mad_zero_for_constant_vectors():
    for c in (-3.0, 0.0, 1e3):
        assert mad(np.full(9, c)).values[0] <= 1e-12


@settings(max_examples=50, deadline=None)
@given(vec(1, 10), st.floats(-5, 5), st.floats(0.1, 5))
def test_clip_bounds_and_gradient(x, lo, width):
    hi = lo + width
    out = clip(x, lo, hi).values
    assert np.all(out >= lo) and np.all(out <= hi)
    g = Graph()
    p = g.parameter(x)
    g.set_output("y", g.add(OpKind.CLIP, [p], lo=lo, hi=hi))
    g.forward({})
    grad = g.backward(np.ones(len(x)))[p]
    np.testing.assert_array_equal(grad, ((x > lo) & (x < hi)).astype(float))


def test_tensors_finite_after_passes():
    g = Graph()
    num = g.parameter([1.0, 2.0])
    den = g.parameter([0.0, 3.0])
    g.set_output("y", g.add(OpKind.MEAN, [g.add(OpKind.DIV_BIAS, [num, den], eps=1e-8)]))
    g.forward({})
    g.backward()
    for p in g.parameters().values():
        assert np.isfinite(p.tensor.values).all() and np.isfinite(p.tensor.grad).all()


def test_parameter_of_builds_vector():
    p = Parameter.of([1.0, 2.0], name="w")
    assert p.tensor.shape == (2,) and p.step_count == 0
