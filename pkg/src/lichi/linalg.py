"""Small dense symmetric linear algebra used by the combination-weight formulas.

Everything here works on a single matrix or on a stack of matrices with the
usual leading batch dimensions, e.g. ``(N, k, k)`` for ``N`` patch groups.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a shifted Gram matrix is not positive definite."""


def gram(a: np.ndarray) -> np.ndarray:
    """Return ``A^T A`` for ``a`` of shape ``(..., n, k)``, exactly symmetric."""
    a = np.asarray(a, dtype=np.float64)
    g = np.matmul(np.swapaxes(a, -1, -2), a)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def solve_spd(m: np.ndarray, lam, b: np.ndarray) -> np.ndarray:
    """Solve ``(M + lam I) X = B`` by Cholesky factorization.

    ``m`` and ``b`` have shape ``(..., k, k)`` (``b`` may have any number of
    columns). ``lam`` is a scalar or an array broadcastable to the batch shape.
    Raises :class:`SingularMatrixError` if any shifted matrix is not positive
    definite; there is no pseudo-inverse fallback.
    """
    m = np.asarray(m, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k = m.shape[-1]
    if m.shape[-2] != k:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    batch = m.shape[:-2]
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), batch)

    mf = m.reshape(-1, k, k)
    bf = np.broadcast_to(b, batch + b.shape[-2:]).reshape(-1, k, b.shape[-1])
    lf = lam.reshape(-1)
    out = np.empty(bf.shape, dtype=np.float64)
    diag = np.arange(k)
    for i in range(mf.shape[0]):
        a = mf[i].copy()
        a[diag, diag] += lf[i]
        c, info = lapack.dpotrf(a, lower=1, clean=0, overwrite_a=1)
        if info != 0:
            raise SingularMatrixError(
                f"matrix {i} is not positive definite after a ridge shift of {lf[i]:g}"
            )
        x, info = lapack.dpotrs(c, bf[i], lower=1)
        if info != 0:
            raise SingularMatrixError(f"cholesky solve failed on matrix {i} (info={info})")
        out[i] = x
    return out.reshape(batch + b.shape[-2:])
