"""Dense float64 arithmetic, norms, seeded random streams and the SVD.

Arrays are plain ``numpy.ndarray`` objects of dtype float64. Random streams
are ``numpy.random.Generator`` instances over the counter-based Philox bit
generator, built from an explicit seed; nothing here touches global RNG state.
"""

import math

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

NORM_ORDERS = (2, math.inf)

SVD_TOL = 1e-12
SVD_MAX_SWEEPS = 60

_LANE_MIX = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def as_vector(x, dim=None):
    """Return ``x`` as a finite 1-D float64 array (copy if needed)."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise ShapeError(f"expected a vector of dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector contains non-finite values")
    return v


def parse_norm_order(p):
    """Normalize the ways a norm order may be spelled to ``2`` or ``math.inf``."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("2", "l2"):
            return 2
        if key in ("inf", "linf", "infinity"):
            return math.inf
        raise DomainError(f"unsupported norm order {p!r}")
    if p == 2:
        return 2
    if p == math.inf:
        return math.inf
    raise DomainError(f"unsupported norm order {p!r}; only 2 and inf")


def norm_order_label(p):
    return "inf" if parse_norm_order(p) == math.inf else "2"


def lp_norm(t, p):
    """The l2 or l-infinity norm of a nonempty array."""
    a = np.asarray(t, dtype=np.float64)
    if a.size == 0:
        raise DomainError("norm of an empty tensor")
    p = parse_norm_order(p)
    flat = a.reshape(-1)
    if p == 2:
        return float(np.linalg.norm(flat))
    return float(np.max(np.abs(flat)))


def make_rng(seed):
    """A fresh random stream determined by ``seed`` alone."""
    seed = int(seed)
    if seed < 0 or seed > _MASK64:
        raise DomainError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.Philox(seed))


def child_seed(seed, lane):
    """Seed for lane ``lane`` derived from ``seed`` (XOR with a lane constant)."""
    return (int(seed) ^ ((int(lane) + 1) * _LANE_MIX)) & _MASK64


def child_rng(seed, lane):
    return make_rng(child_seed(seed, lane))


def sample_sphere(d, radius, rng):
    """Uniform draw from the l2 sphere of the given radius in ``d`` dimensions.

    Gaussian direction, normalized and rescaled.
    """
    if d < 1:
        raise DomainError("dimension must be >= 1")
    if not radius > 0:
        raise DomainError("radius must be positive")
    while True:
        g = rng.standard_normal(int(d))
        n = np.linalg.norm(g)
        if n > 0:
            return g * (radius / n)


def _complete_orthonormal(u, good):
    """Replace the columns of ``u`` not flagged in ``good`` by an orthonormal completion."""
    m, k = u.shape
    basis = [u[:, j] for j in range(k) if good[j]]
    out = u.copy()
    cand = 0
    for j in range(k):
        if good[j]:
            continue
        while True:
            e = np.zeros(m)
            e[cand % m] = 1.0
            cand += 1
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            n = np.linalg.norm(e)
            if n > 1e-8:
                e /= n
                break
        basis.append(e)
        out[:, j] = e
    return out


def svd(m):
    """Thin singular value decomposition by one-sided (Hestenes) Jacobi.

    Parameters
    ----------
    m : array_like, shape (rows, cols)

    Returns
    -------
    u : ndarray, shape (rows, k)
    sigma : ndarray, shape (k,)
        Nonnegative, sorted in decreasing order.
    v : ndarray, shape (cols, k)
        With ``k = min(rows, cols)`` and ``u @ diag(sigma) @ v.T == m``.

    Rotations act on the smaller side: a wide matrix is transposed first.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError("svd expects a nonempty 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise DomainError("svd input contains non-finite values")
    if a.shape[1] > a.shape[0]:
        u, s, v = svd(a.T)
        return v, s, u

    n = a.shape[1]
    # rotations run in place, so never hand the kernel a view of the caller's array
    at = np.array(a.T, dtype=np.float64, order="C", copy=True)
    vt = np.eye(n)
    kernels.jacobi_sweeps(at, vt, SVD_TOL, SVD_MAX_SWEEPS)

    sigma = np.sqrt(np.einsum("ij,ij->i", at, at))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    at = at[order]
    v = vt[order].T.copy()

    scale = sigma[0] if sigma[0] > 0 else 1.0
    good = sigma > scale * max(a.shape) * np.finfo(float).eps
    u = np.zeros((a.shape[0], n))
    u[:, good] = (at[good] / sigma[good, None]).T
    if not np.all(good):
        u = _complete_orthonormal(u, good)
    return u, sigma, v
