"""Shared test oracles: finite differences and relative-error metrics."""

import numpy as np


def central_diff(fn, arrays, h=1e-5):
    """Central finite-difference gradient of scalar fn w.r.t. each array.

    ``fn`` must treat its inputs as read-only and return a float.  This is
    the independent oracle against which recorded gradients are judged; it
    never touches the autodiff machinery.
    """
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = fn(arrays)
            flat[i] = orig - h
            lo = fn(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-6):
    """Max elementwise relative error with an absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))
