"""Small dense linear algebra used by the estimator and certification code.

Everything here works on plain ``numpy`` float arrays.  Sizes are tiny
(n <= 8), so the routines favour transparency over speed.
"""

import math

import numpy as np

from .errors import DimensionError, NumericalFailureError, SingularMatrixError

MAX_DIM = 8

_SINGULAR_TOL = 1e-14
_POWER_TOL = 1e-10
_POWER_MAXITER = 10_000


def check_dimension(n, lo=2, hi=MAX_DIM):
    if int(n) != n or not lo <= n <= hi:
        raise DimensionError(f"dimension n={n} outside [{lo}, {hi}]")
    return int(n)


def vandermonde(n):
    """Return the n x n matrix with entries (i-1)**(j-1), using 0**0 = 1.

    Row i holds the powers of the sample lag i-1, so that the first row picks
    out the newest sample.
    """
    n = check_dimension(n)
    lags = np.arange(n, dtype=float)
    # numpy evaluates 0.0**0 as 1.0, which is the convention we need.
    return lags[:, None] ** np.arange(n, dtype=float)[None, :]


def invert(m):
    """Invert a square matrix by Gauss-Jordan elimination with partial pivoting."""
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cannot invert matrix of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("matrix has non-finite entries")
    n = a.shape[0]
    aug = np.hstack([a, np.eye(n)])
    scale = max(np.abs(a).max(), 1.0)
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[pivot, col]) <= _SINGULAR_TOL * scale:
            raise SingularMatrixError(f"matrix is singular to tolerance (column {col})")
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0.0:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


def shift_matrix(n):
    """Nilpotent chain matrix with ones on the superdiagonal."""
    return np.eye(n, k=1)


def nilpotent_exp(n, s):
    """exp(A s) for the n x n shift matrix A, evaluated as a finite polynomial."""
    if int(n) != n or n < 1:
        raise DimensionError(f"dimension n={n} must be a positive integer")
    n = int(n)
    s = float(s)
    out = np.zeros((n, n))
    for d in range(n):
        val = s**d / math.factorial(d)
        idx = np.arange(n - d)
        out[idx, idx + d] = val
    return out


def induced_norm2(m):
    """Largest singular value via power iteration on m^T m.

    The start vector is all ones; if that happens to be orthogonal to the
    dominant singular direction the iteration restarts from a fixed perturbed
    vector.
    """
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if not np.all(np.isfinite(a)):
        raise NumericalFailureError("matrix has non-finite entries")
    if not np.any(a):
        return 0.0
    gram = a.T @ a
    cols = gram.shape[0]
    starts = (
        np.ones(cols),
        np.ones(cols) + 0.1 * np.arange(1, cols + 1) / cols * (-1.0) ** np.arange(cols),
    )
    for v in starts:
        v = v / np.linalg.norm(v)
        lam = 0.0
        for _ in range(_POWER_MAXITER):
            w = gram @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            lam_new = float(v @ w)
            v = w / nw
            if abs(lam_new - lam) <= _POWER_TOL * abs(lam_new):
                # Rayleigh quotient converges quadratically for symmetric gram.
                return math.sqrt(max(float(v @ gram @ v), 0.0))
            lam = lam_new
        else:
            raise NumericalFailureError("power iteration did not converge")
    raise NumericalFailureError("power iteration failed from every start vector")
