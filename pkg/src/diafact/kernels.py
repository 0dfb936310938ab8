"""Small dense factorization kernels used per column of the sparse algorithms.

All routines here operate on row-compressed column blocks whose dimensions
are tiny compared with the host matrix, so plain Householder / Jacobi
iterations are both fast enough and give full control over sign conventions.
Everything is pure and reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import ColumnSubmatrix, SparseVector

__all__ = [
    "QRFactors",
    "SVDFactors",
    "LstsqResult",
    "qr_householder",
    "svd_small",
    "lstsq",
    "lu_factor",
    "lu_solve",
    "lu_solve_transpose",
]

# rank / pseudoinverse cutoff relative to the Frobenius norm of the input
RANK_TOL = 1e-14


@dataclass(frozen=True)
class QRFactors:
    """Thin QR factorization with nonnegative R diagonal.

    ``rank`` counts the diagonal entries of R above ``RANK_TOL`` times the
    Frobenius norm of the factored matrix; rank deficiency is reported, not
    hidden.
    """

    q_thin: np.ndarray
    r: np.ndarray
    rank: int


@dataclass(frozen=True)
class SVDFactors:
    """Thin SVD ``u @ diag(sigma) @ v.T`` with sigma sorted descending.

    The sign of each right singular vector is fixed so that its
    largest-magnitude component is nonnegative (first such component on
    ties), which makes results reproducible across platforms.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class LstsqResult:
    solution: np.ndarray
    residual: float
    rank_deficient: bool


def qr_householder(m):
    """Householder QR of a dense ``m x k`` block with ``m >= k >= 1``.

    Returns thin factors with ``r`` diagonal >= 0.  Raises on non-finite
    input.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-d array")
    rows, k = a.shape
    if rows < k or k < 1:
        raise ValueError("need rows >= cols >= 1")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entry in QR input")
    fro = float(np.sqrt((a * a).sum()))

    vs = []
    for j in range(k):
        x = a[j:, j]
        nx = float(np.sqrt(np.dot(x, x)))
        if nx == 0.0:
            vs.append(None)
            continue
        v = x.copy()
        v[0] += nx if v[0] >= 0 else -nx
        beta = 2.0 / float(np.dot(v, v))
        vs.append((v, beta))
        a[j:, j:] -= np.outer(v * beta, v @ a[j:, j:])
    r = np.triu(a[:k, :k]).copy()

    q = np.zeros((rows, k))
    q[:k, :k] = np.eye(k)
    for j in range(k - 1, -1, -1):
        if vs[j] is None:
            continue
        v, beta = vs[j]
        q[j:, :] -= np.outer(v * beta, v @ q[j:, :])

    flip = np.diag(r) < 0
    if flip.any():
        r[flip, :] = -r[flip, :]
        q[:, flip] = -q[:, flip]
    rank = int(np.count_nonzero(np.abs(np.diag(r)) > RANK_TOL * fro))
    return QRFactors(q, r, rank)


def _complete_orthonormal(u, start):
    """Fill columns ``start:`` of ``u`` with an orthonormal completion."""
    rows, k = u.shape
    col = start
    for cand in range(rows):
        if col >= k:
            break
        w = np.zeros(rows)
        w[cand] = 1.0
        for _ in range(2):  # twice for numerical safety
            w -= u[:, :col] @ (u[:, :col].T @ w)
        nw = float(np.sqrt(np.dot(w, w)))
        if nw > 0.5:
            u[:, col] = w / nw
            col += 1
    if col < k:
        raise ValueError("orthonormal completion failed")


_ROUND_ROBIN_CACHE = {}


def _round_robin(q):
    """Rounds of disjoint column pairs covering all q(q-1)/2 combinations.

    The usual tournament schedule: pairs within a round touch disjoint
    columns, so their rotations commute and can be applied in one batch.
    """
    rounds = _ROUND_ROBIN_CACHE.get(q)
    if rounds is None:
        arr = list(range(q)) + ([-1] if q % 2 else [])
        n = len(arr)
        rounds = []
        for _ in range(n - 1):
            pairs = [
                (min(arr[k], arr[n - 1 - k]), max(arr[k], arr[n - 1 - k]))
                for k in range(n // 2)
                if arr[k] != -1 and arr[n - 1 - k] != -1
            ]
            rounds.append(
                (
                    np.array([p[0] for p in pairs], dtype=np.intp),
                    np.array([p[1] for p in pairs], dtype=np.intp),
                )
            )
            arr = [arr[0], arr[-1]] + arr[1:-1]
        _ROUND_ROBIN_CACHE[q] = rounds
    return rounds


def svd_small(m, max_sweeps=30, tol=1e-14):
    """One-sided Jacobi SVD of a small dense matrix.

    Columns are rotated pairwise until every pair is orthogonal to ``tol``
    relative to the column norms; non-convergence within ``max_sweeps``
    sweeps signals pathological input and raises.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("expected a nonempty 2-d array")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entry in SVD input")
    if a.shape[0] < a.shape[1]:
        f = svd_small(a.T, max_sweeps=max_sweeps, tol=tol)
        return SVDFactors(f.v, f.sigma, f.u)

    p, q = a.shape
    # the rotation factor is stacked under the working block so every
    # rotation updates both with a single pair of column writes
    g = np.vstack([a, np.eye(q)])
    # pairs of columns that are both numerically zero (below the rank
    # cutoff) carry no signal; rotating them would shuffle roundoff noise
    # forever on rank-deficient input
    zero_sq = RANK_TOL ** 2 * float((a * a).sum())
    for _ in range(max_sweeps):
        # processing columns in norm order speeds up convergence a little
        norms_sq = (g[:p] * g[:p]).sum(axis=0)
        by_norm = np.argsort(-norms_sq, kind="stable")
        rotated = False
        for left, right in _round_robin(q):
            li, ri = by_norm[left], by_norm[right]
            bi = g[:p, li]
            bj = g[:p, ri]
            alpha = (bi * bi).sum(axis=0)
            beta = (bj * bj).sum(axis=0)
            gamma = (bi * bj).sum(axis=0)
            act = (
                (np.abs(gamma) > tol * np.sqrt(alpha * beta))
                & (alpha > zero_sq)
                & (beta > zero_sq)
            )
            if not act.any():
                continue
            rotated = True
            li, ri = li[act], ri[act]
            zeta = (beta[act] - alpha[act]) / (2.0 * gamma[act])
            # hypot keeps extreme norm ratios from overflowing zeta**2
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            gi, gj = g[:, li], g[:, ri]
            g[:, li] = gi * c - gj * s
            g[:, ri] = gi * s + gj * c
        if not rotated:
            break
    else:
        raise ValueError("Jacobi SVD did not converge within 30 sweeps")

    b, v = g[:p], g[p:]
    sigma = np.sqrt((b * b).sum(axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    v = v[:, order]
    u = np.zeros((p, q))
    nz = sigma > 0.0
    u[:, nz] = b[:, order[nz]] / sigma[nz]
    if not nz.all():
        first_zero = int(np.nonzero(~nz)[0][0])
        _complete_orthonormal(u, first_zero)

    for i in range(q):
        kmax = int(np.argmax(np.abs(v[:, i])))
        if v[kmax, i] < 0.0:
            v[:, i] = -v[:, i]
            u[:, i] = -u[:, i]
    return SVDFactors(u, sigma, v)


def _solve_upper(r, b):
    k = r.shape[0]
    x = np.zeros(k)
    for i in range(k - 1, -1, -1):
        x[i] = (b[i] - np.dot(r[i, i + 1:], x[i + 1:])) / r[i, i]
    return x


def pad_tall(block):
    """Pad a wide block with zero rows so that rows >= cols (QR-compatible)."""
    rows, k = block.shape
    if rows >= k:
        return block
    return np.vstack([block, np.zeros((k - rows, k))])


def lstsq(a_j, rhs):
    """Minimum-norm least squares ``min ||a_j w - rhs||_2``.

    ``a_j`` is a :class:`ColumnSubmatrix`; ``rhs`` is a sparse n-vector.
    Components of ``rhs`` outside the active rows of ``a_j`` cannot be
    reached by any ``w``; they are excluded from the solve but included in
    the reported residual.  A rank-deficient block falls back to an SVD
    pseudoinverse and is flagged.
    """
    if not isinstance(a_j, ColumnSubmatrix):
        raise TypeError("a_j must be a ColumnSubmatrix")
    if not isinstance(rhs, SparseVector) or rhs.n != a_j.n_rows:
        raise ValueError("rhs must be a sparse vector of matching dimension")
    active = a_j.active_rows
    k = a_j.k
    b_act = np.zeros(len(active))
    out_sq = 0.0
    if rhs.nnz:
        if len(active):
            pos = np.minimum(np.searchsorted(active, rhs.idx), len(active) - 1)
            inside = active[pos] == rhs.idx
            b_act[pos[inside]] = rhs.val[inside]
        else:
            inside = np.zeros(rhs.nnz, dtype=bool)
        out_sq = float(np.dot(rhs.val[~inside], rhs.val[~inside]))

    block = pad_tall(a_j.dense_block)
    b_pad = np.concatenate([b_act, np.zeros(block.shape[0] - len(b_act))])
    qr = qr_householder(block)
    qtb = qr.q_thin.T @ b_pad
    if qr.rank == k:
        w = _solve_upper(qr.r, qtb)
        flagged = False
    else:
        f = svd_small(qr.r)
        fro = float(np.sqrt((a_j.dense_block ** 2).sum()))
        inv = np.where(f.sigma > RANK_TOL * fro, 1.0 / np.where(f.sigma > 0, f.sigma, 1.0), 0.0)
        w = f.v @ (inv * (f.u.T @ qtb))
        flagged = True
    in_res = a_j.dense_block @ w - b_act
    residual = float(np.sqrt(np.dot(in_res, in_res) + out_sq))
    return LstsqResult(w, residual, flagged)


def lu_factor(a):
    """Dense LU with partial pivoting; returns (lu, perm) with a[perm] = L @ U.

    Raises ``ZeroDivisionError`` on an exactly singular block.
    """
    lu = np.array(a, dtype=np.float64)
    k = lu.shape[0]
    if lu.shape != (k, k):
        raise ValueError("square block expected")
    perm = np.arange(k)
    for c in range(k):
        piv = c + int(np.argmax(np.abs(lu[c:, c])))
        if lu[piv, c] == 0.0:
            raise ZeroDivisionError("singular block in LU factorization")
        if piv != c:
            lu[[c, piv]] = lu[[piv, c]]
            perm[[c, piv]] = perm[[piv, c]]
        lu[c + 1:, c] /= lu[c, c]
        if c + 1 < k:
            lu[c + 1:, c + 1:] -= np.outer(lu[c + 1:, c], lu[c, c + 1:])
    return lu, perm


def lu_solve(factors, b):
    lu, perm = factors
    k = lu.shape[0]
    x = np.asarray(b, dtype=np.float64)[perm].copy()
    for i in range(1, k):
        x[i] -= np.dot(lu[i, :i], x[:i])
    for i in range(k - 1, -1, -1):
        x[i] = (x[i] - np.dot(lu[i, i + 1:], x[i + 1:])) / lu[i, i]
    return x


def lu_solve_transpose(factors, b):
    """Solve ``a.T y = b`` given ``lu_factor(a)`` output."""
    lu, perm = factors
    k = lu.shape[0]
    w = np.asarray(b, dtype=np.float64).copy()
    for i in range(k):  # U^T is lower triangular
        w[i] = (w[i] - np.dot(lu[:i, i], w[:i])) / lu[i, i]
    for i in range(k - 1, -1, -1):  # L^T is unit upper triangular
        w[i] -= np.dot(lu[i + 1:, i], w[i + 1:])
    y = np.empty(k)
    y[perm] = w
    return y
