"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
All arrays are float64 and C-contiguous; the Cython versions rely on that.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sliding_extrema(x, k, is_max):
    """Stride-1 window min or max over axis 1 of a 2-D array.

    Returns ``(values, index)`` with shape ``(B, n - k + 1)``. ``index`` holds
    the absolute position of the first element attaining the extremum.
    """
    win = sliding_window_view(x, k, axis=1)
    rel = win.argmax(axis=2) if is_max else win.argmin(axis=2)
    idx = rel + np.arange(x.shape[1] - k + 1)[None, :]
    vals = np.take_along_axis(x, idx, axis=1)
    return vals, idx.astype(np.int64)


def qnet_forward(x, w1, w2, relu):
    """Two-layer bias-free network: ``q = act(x @ w1.T) @ w2.T``."""
    pre = x @ w1.T
    h = np.maximum(pre, 0.0) if relu else pre
    q = h @ w2.T
    return pre, h, q


def qnet_loss_grad(x, actions, targets, w1, w2, relu):
    """Mean squared TD error of the taken actions and its weight gradients."""
    pre, h, q = qnet_forward(x, w1, w2, relu)
    b = x.shape[0]
    rows = np.arange(b)
    err = q[rows, actions] - targets
    loss = float(np.mean(err * err))
    dq = np.zeros_like(q)
    dq[rows, actions] = (2.0 / b) * err
    gw2 = dq.T @ h
    dh = dq @ w2
    if relu:
        dh = dh * (pre > 0.0)
    gw1 = dh.T @ x
    return loss, gw1, gw2


def adam_update(w, g, m, v, step, lr, beta1, beta2, eps):
    """In-place bias-corrected Adam update; ``step`` is the 1-based step index."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
