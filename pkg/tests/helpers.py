"""Shared constructors for the test suite."""

import numpy as np

from diafact.sparse import SparseMatrix, SubspacePattern


def random_sparse(rng, n, density=0.15, dominant=True):
    """Random sparse square matrix, diagonally dominant by default."""
    a = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    if dominant:
        a += np.diag(np.abs(a).sum(axis=1) + 1.0 + rng.random(n))
    else:
        a += np.diag(rng.random(n) + 0.5)
    return SparseMatrix.from_dense(a)


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def random_pattern(rng, n, per_col, with_diag=True):
    cols = []
    for j in range(n):
        extra = rng.choice(n, size=min(per_col, n), replace=False)
        c = np.unique(np.concatenate([extra, [j]]) if with_diag else extra)
        cols.append(c if len(c) else np.array([j]))
    return SubspacePattern(n, cols)


def full_pattern(n):
    return SubspacePattern(n, [np.arange(n)] * n)
