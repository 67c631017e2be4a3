import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinlab import kernels
from tinlab.kernels import _pykernels

BACKENDS = kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


def dense_case(seed, batch=32, d=52, hidden=26):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(batch, d)), rng.normal(size=(hidden, d)), rng.normal(size=(3, hidden)),
            rng.integers(0, 3, batch), rng.normal(size=batch))


def test_backend_name_is_known():
    assert kernels.BACKEND in BACKENDS


def test_sliding_extrema_brute_force(backend):
    rng = np.random.default_rng(0)
    x = rng.integers(0, 5, size=(4, 30)).astype(float)  # many ties
    for k in (1, 3, 7, 30):
        for is_max in (True, False):
            vals, idx = backend.sliding_extrema(x, k, is_max)
            for r in range(4):
                for i in range(30 - k + 1):
                    win = x[r, i:i + k]
                    j = int(np.argmax(win) if is_max else np.argmin(win))
                    assert idx[r, i] == i + j
                    assert vals[r, i] == win[j]


@pytest.mark.parametrize("relu", [False, True])
def test_qnet_forward_matches_reference(backend, relu):
    x, w1, w2, _, _ = dense_case(1)
    for got, want in zip(backend.qnet_forward(x, w1, w2, relu), _pykernels.qnet_forward(x, w1, w2, relu)):
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-12)


@pytest.mark.parametrize("relu", [False, True])
def test_qnet_loss_grad_matches_finite_differences(backend, relu):
    x, w1, w2, a, t = dense_case(2, batch=8, d=10, hidden=6)
    loss, g1, g2 = backend.qnet_loss_grad(x, a, t, w1, w2, relu)
    h = 1e-6
    for w, g in ((w1, g1), (w2, g2)):
        for idx in [(0, 0), (1, 2), (w.shape[0] - 1, w.shape[1] - 1)]:
            orig = w[idx]
            w[idx] = orig + h
            fp = backend.qnet_loss_grad(x, a, t, w1, w2, relu)[0]
            w[idx] = orig - h
            fm = backend.qnet_loss_grad(x, a, t, w1, w2, relu)[0]
            w[idx] = orig
            assert g[idx] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-7)
    ref = _pykernels.qnet_loss_grad(x, a, t, w1, w2, relu)
    assert loss == pytest.approx(ref[0], rel=1e-13)


def test_adam_update_matches_reference(backend):
    rng = np.random.default_rng(3)
    w, g = rng.normal(size=50), rng.normal(size=50)
    states = []
    for mod in (backend, _pykernels):
        ww, m, v = w.copy(), np.zeros(50), np.zeros(50)
        for step in range(1, 4):
            mod.adam_update(ww, g, m, v, step, 1e-3, 0.9, 0.999, 1e-8)
        states.append((ww, m, v))
    for a, b in zip(*states):
        np.testing.assert_array_equal(a, b)


def test_loss_grad_rejects_bad_actions():
    x, w1, w2, a, t = dense_case(4, batch=4)
    a[0] = 3
    with pytest.raises(IndexError):
        kernels.qnet_loss_grad(x, a, t, w1, w2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 5), st.data())
def test_wrappers_agree_with_reference(n, b, data):
    k = data.draw(st.integers(1, n))
    x = np.random.default_rng(n * 7 + b).normal(size=(b, n))
    for is_max in (True, False):
        got = kernels.sliding_extrema(x, k, is_max)
        want = _pykernels.sliding_extrema(x, k, is_max)
        np.testing.assert_array_equal(got[0], want[0])
        np.testing.assert_array_equal(got[1], want[1])
