"""Dense and sparse direct solves.

Thin contracts over LAPACK (partial-pivoting LU) and SuperLU (sparse LU with
COLAMD fill-reducing ordering): well-conditioned systems solve to near machine
precision, numerically singular ones raise SingularMatrixError.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import SingularMatrixError

PIVOT_RTOL = 1e-14


@dataclass
class SparseMatrix:
    """Compressed-row storage; column indices sorted within each row and
    duplicates merged."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        m = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape)

    @classmethod
    def from_scipy(cls, m):
        m = m.tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.indptr, m.indices, m.data, m.shape)

    def to_scipy(self):
        return scipy.sparse.csr_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape)

    @property
    def nnz(self):
        return self.data.shape[0]

    def matvec(self, x):
        return self.to_scipy() @ x

    def __matmul__(self, x):
        return self.matvec(x)


def dense_lu_solve(A, b):
    """Solve a dense square system by LU with partial pivoting."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SingularMatrixError(f"matrix shape {A.shape} is not square")
    scale = np.max(np.abs(A)) if A.size else 0.0
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    diag = np.abs(np.diag(lu))
    if scale == 0.0 or np.any(diag <= PIVOT_RTOL * scale):
        row = int(np.argmin(diag)) if diag.size else 0
        raise SingularMatrixError(
            f"numerically singular matrix (pivot {diag.min() if diag.size else 0.0:.3e} "
            f"at row {row})", row=row)
    return scipy.linalg.lu_solve((lu, piv), b, check_finite=False)


def sparse_lu_solve(A, b):
    """Solve a sparse square system with SuperLU (COLAMD column ordering)."""
    if isinstance(A, SparseMatrix):
        A = A.to_scipy()
    A = A.tocsc()
    b = np.asarray(b, dtype=float)
    try:
        lu = scipy.sparse.linalg.splu(A)
        x = lu.solve(b)
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise SingularMatrixError(f"sparse LU failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("sparse LU produced non-finite entries")
    return x
