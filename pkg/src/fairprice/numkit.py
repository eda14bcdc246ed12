"""Dense numeric kernel: matrix helpers, seeded RNG, standardization, ranking.

All routines operate on float64 numpy arrays. Variances are population
(1/n) variances throughout, matching per-batch standardization during
stochastic training.
"""

import numpy as np

__all__ = [
    "Rng",
    "matmul",
    "svd_small",
    "standardize_columns",
    "rank_transform",
    "pearson",
]

# Columns whose population std falls below this are treated as constant.
_CONST_TOL = 1e-12


class Rng:
    """Deterministic random stream with derivable child streams.

    Backed by numpy's PCG64 generator seeded through ``SeedSequence``, so
    identical entropy yields an identical stream on a given platform.
    Instances are single-owner: parallel code must derive children via
    :meth:`child` instead of sharing one instance.
    """

    def __init__(self, seed, _key=()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *self._key]))
        )

    def child(self, index):
        """Derive an independent stream identified by (seed, ..., index)."""
        return Rng(self.seed, _key=(*self._key, int(index)))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def multivariate_normal(self, mean, cov, size=None):
        return self._gen.multivariate_normal(mean, cov, size)

    def binomial(self, n, p, size=None):
        return self._gen.binomial(n, p, size)

    def poisson(self, lam, size=None):
        return self._gen.poisson(lam, size)


def _as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    """Matrix product with an explicit dimension check."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    return a @ b


def svd_small(a):
    """SVD of a small dense matrix.

    Returns ``(sigma, left, right)`` with ``a ~= left @ diag(sigma) @ right.T``
    and singular values sorted descending. Intended for desk-scale matrices
    (min dimension <= 512): dependence-estimator bin matrices and projection
    blocks.
    """
    a = _as_matrix(a, "a")
    if not np.all(np.isfinite(a)):
        raise ValueError("svd_small requires finite entries")
    if min(a.shape) > 512:
        raise ValueError(f"svd_small is for small matrices, got {a.shape}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return s, u, vt.T


def standardize_columns(a):
    """Center and scale columns to mean 0, population variance 1.

    Constant columns map to all-zeros and their std is recorded as 1, so a
    collapsed column (e.g. an adversary output mid-training) degrades to a
    zero signal instead of raising.

    Returns ``(standardized, means, stds)``.
    """
    a = _as_matrix(a, "a")
    if a.size == 0:
        raise ValueError("standardize_columns: empty matrix")
    means = a.mean(axis=0)
    stds = a.std(axis=0)  # population (1/n)
    const = stds < _CONST_TOL
    safe = np.where(const, 1.0, stds)
    out = (a - means) / safe
    if const.any():
        out[:, const] = 0.0
    return out, means, np.where(const, 1.0, stds)


def rank_transform(x):
    """Map values to average ranks scaled into (0, 1): rank_i / (n + 1)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("rank_transform: empty input")
    n = x.size
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(1, n + 1, dtype=float)
    # resolve ties by average rank
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.zeros(counts.size)
    np.add.at(sums, inverse, ranks)
    return (sums[inverse] / counts[inverse]) / (n + 1)


def pearson(u, v):
    """Sample Pearson correlation with population-std normalization.

    Returns 0.0 when either argument is constant (degenerate rule).
    """
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size != v.size:
        raise ValueError(f"pearson length mismatch: {u.size} vs {v.size}")
    if u.size < 2:
        raise ValueError("pearson requires length >= 2")
    su = u.std()
    sv = v.std()
    if su < _CONST_TOL or sv < _CONST_TOL:
        return 0.0
    r = float(((u - u.mean()) * (v - v.mean())).mean() / (su * sv))
    return max(-1.0, min(1.0, r))
