"""SGD and Adam updates over graph parameters.

Both take ``params`` and ``grads`` as mappings keyed by parameter id (the
shape returned by :meth:`Graph.parameters` and :meth:`Graph.backward`) and
update the parameter values in place.
"""
import numpy as np

from . import kernels
from .errors import ConfigurationError, DimensionError


def _pairs(params, grads):
    for pid, g in grads.items():
        p = params[pid]
        g = np.asarray(g, dtype=np.float64).reshape(-1)
        if g.size != p.tensor.size:
            raise DimensionError(f"gradient for parameter {pid} has {g.size} entries, expected {p.tensor.size}")
        if p.trainable:
            yield p, g


def sgd_step(params, grads, lr):
    """``w <- w - lr * g`` for every trainable parameter with a gradient."""
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}")
    for p, g in _pairs(params, grads):
        p.tensor.values -= lr * g
        p.step_count += 1
    return params


def adam_step(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam; moment buffers are created on first use."""
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be > 0, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ConfigurationError(f"Adam betas must lie in [0, 1), got {beta1}, {beta2}")
    if not eps > 0:
        raise ConfigurationError(f"Adam eps must be > 0, got {eps}")
    for p, g in _pairs(params, grads):
        if p.m1 is None:
            p.m1 = np.zeros_like(p.tensor.values)
            p.m2 = np.zeros_like(p.tensor.values)
        p.step_count += 1
        kernels.adam_update(p.tensor.values, g, p.m1, p.m2, p.step_count, lr, beta1, beta2, eps)
    return params
