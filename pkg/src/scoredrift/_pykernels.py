"""Pure-Python EWMA / MEWMA recursions, used when the compiled kernels are unavailable."""
import numpy as np


def ewma(x, z0, lam):
    x = np.asarray(x, dtype=np.float64)
    n, k = x.shape
    keep = 1.0 - lam
    out = np.empty((n, k))
    z = np.array(z0, dtype=np.float64)
    for t in range(n):
        z = lam * x[t] + keep * z
        out[t] = z
    return out


def mewma_t2(s, z0, center, whitener, lam):
    s = np.asarray(s, dtype=np.float64)
    n = s.shape[0]
    keep = 1.0 - lam
    zs = np.empty_like(s)
    z = np.array(z0, dtype=np.float64)
    for t in range(n):
        z = lam * s[t] + keep * z
        zs[t] = z
    proj = (zs - center) @ whitener
    t2 = np.einsum("ij,ij->i", proj, proj)
    return t2, z
