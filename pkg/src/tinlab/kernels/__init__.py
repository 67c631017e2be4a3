"""Hot numerical kernels with a compiled backend and a numpy fallback.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy versions in ``_pykernels`` are used. Set ``TINLAB_PURE_PYTHON=1`` to
force the fallback. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("TINLAB_PURE_PYTHON") == "1":
        raise ImportError("compiled kernels disabled by TINLAB_PURE_PYTHON")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def available_backends():
    """Return ``{name: module}`` for every backend that can be imported."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sliding_extrema(x, k, is_max):
    return _impl.sliding_extrema(_c(x), int(k), bool(is_max))


def qnet_forward(x, w1, w2, relu=False):
    return _impl.qnet_forward(_c(x), _c(w1), _c(w2), bool(relu))


def qnet_loss_grad(x, actions, targets, w1, w2, relu=False):
    actions = np.ascontiguousarray(actions, dtype=np.int64)
    w2 = _c(w2)
    if actions.size and (actions.min() < 0 or actions.max() >= w2.shape[0]):
        raise IndexError(f"actions must lie in [0, {w2.shape[0]})")
    return _impl.qnet_loss_grad(_c(x), actions, _c(targets), _c(w1), _c(w2), bool(relu))


def adam_update(w, g, m, v, step, lr, beta1, beta2, eps):
    """Update ``w``, ``m`` and ``v`` in place. All four must be contiguous float64."""
    if _impl is _pykernels:
        _pykernels.adam_update(w, g, m, v, step, lr, beta1, beta2, eps)
    else:
        _impl.adam_update(w.reshape(-1), _c(g).reshape(-1), m.reshape(-1), v.reshape(-1),
                          int(step), lr, beta1, beta2, eps)
