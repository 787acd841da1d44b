"""Backend selection for the EWMA hot loops.

The compiled extension is used when importable; set ``SCOREDRIFT_PURE_PYTHON=1``
to force the pure-Python implementation.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("SCOREDRIFT_PURE_PYTHON") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "cython"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def ewma(x, z0, lam, backend=None):
    """Column-wise EWMA ``z_t = lam * x_t + (1 - lam) * z_{t-1}``.

    ``x`` may be 1-D (a single series) or 2-D ``(n, k)``; the output has the
    same shape as ``x``.
    """
    impl = _pick(backend)
    x = _f64(x)
    flat = x.ndim == 1
    x2 = x.reshape(-1, 1) if flat else x
    z0 = _f64(np.broadcast_to(np.asarray(z0, dtype=np.float64), (x2.shape[1],)))
    out = impl.ewma(x2, z0, float(lam))
    return out[:, 0] if flat else out


def mewma_t2(s, z0, center, whitener, lam, backend=None):
    """Run the MEWMA recursion and return ``(T2 per row, final z)``.

    ``T2_t = || W^T (z_t - center) ||^2`` where ``W`` is the whitening factor of
    the stabilized inverse covariance (``inv_cov = W W^T``).
    """
    impl = _pick(backend)
    s = _f64(s)
    if s.ndim != 2:
        raise ValueError("scores must be a 2-D array")
    t2, z = impl.mewma_t2(s, _f64(z0), _f64(center), _f64(whitener), float(lam))
    return np.asarray(t2), np.asarray(z)


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")
