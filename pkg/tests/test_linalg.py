import numpy as np
import pytest
import scipy.linalg
import scipy.sparse

from hybridns.errors import SingularMatrixError
from hybridns.linalg import SparseMatrix, dense_lu_solve, sparse_lu_solve


def test_dense_identity():
    b = np.array([3.0, -1.0, 2.0])
    assert np.allclose(dense_lu_solve(np.eye(3), b), b)


def test_dense_diagonal():
    A = np.array([[2.0, 0.0], [0.0, 4.0]])
    assert np.allclose(dense_lu_solve(A, [2.0, 8.0]), [1.0, 2.0])


def test_dense_spd_against_refined_cholesky():
    # Oracle: Cholesky solve plus one step of iterative refinement with the
    # residual accumulated in extended precision.
    rng = np.random.default_rng(2)
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = dense_lu_solve(A, b)
    cho = scipy.linalg.cho_factor(A)
    y = scipy.linalg.cho_solve(cho, b)
    r = (b.astype(np.longdouble)
         - A.astype(np.longdouble) @ y.astype(np.longdouble))
    y = y + scipy.linalg.cho_solve(cho, r.astype(float))
    assert np.max(np.abs(x - y)) < 1e-10 * max(1.0, np.max(np.abs(y)))


def test_dense_residual_contract():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((80, 80))
    b = rng.standard_normal(80)
    x = dense_lu_solve(A, b)
    lhs = np.linalg.norm(A @ x - b)
    rhs = 1e-10 * (np.linalg.norm(A) * np.linalg.norm(x) + np.linalg.norm(b))
    assert lhs <= rhs


def test_dense_singular_raises():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularMatrixError):
        dense_lu_solve(A, [1.0, 1.0])
    with pytest.raises(SingularMatrixError):
        dense_lu_solve(np.ones((2, 3)), [1.0, 1.0])


def test_sparse_matrix_invariants():
    rows = [0, 1, 1, 0, 2]
    cols = [1, 0, 0, 1, 2]
    vals = [1.0, 2.0, 3.0, 4.0, 5.0]
    m = SparseMatrix.from_coo(rows, cols, vals, (3, 3))
    # duplicates merged, columns sorted
    assert m.nnz == 3
    for r in range(3):
        idx = m.indices[m.indptr[r]:m.indptr[r + 1]]
        assert np.all(np.diff(idx) > 0)
    dense = np.asarray(m.to_scipy().todense())
    assert dense[0, 1] == 5.0 and dense[1, 0] == 5.0 and dense[2, 2] == 5.0


def test_sparse_diagonal():
    d = np.array([2.0, 5.0, 0.5])
    m = SparseMatrix.from_coo([0, 1, 2], [0, 1, 2], d, (3, 3))
    b = np.array([4.0, 10.0, 2.0])
    assert np.allclose(sparse_lu_solve(m, b), b / d)


def test_sparse_permutation():
    perm = [2, 0, 1]
    m = SparseMatrix.from_coo(range(3), perm, np.ones(3), (3, 3))
    b = np.array([1.0, 2.0, 3.0])
    x = sparse_lu_solve(m, b)
    assert np.allclose(np.asarray(m.to_scipy().todense()) @ x, b)


def test_sparse_against_dense_oracle():
    rng = np.random.default_rng(9)
    n = 400
    density = 0.02
    A = scipy.sparse.random(n, n, density=density, random_state=42,
                            format="csr")
    A = A + scipy.sparse.eye(n) * n
    b = rng.standard_normal(n)
    x = sparse_lu_solve(SparseMatrix.from_scipy(A), b)
    x_dense = np.linalg.solve(np.asarray(A.todense()), b)
    assert np.max(np.abs(x - x_dense)) <= 1e-9 * max(1.0, np.max(np.abs(x_dense)))


def test_sparse_singular_raises():
    m = SparseMatrix.from_coo([0, 1], [0, 1], [1.0, 0.0], (3, 3))
    with pytest.raises(SingularMatrixError):
        sparse_lu_solve(m, np.ones(3))


def test_exact_image_recovered():
    rng = np.random.default_rng(31)
    n = 200
    A = scipy.sparse.random(n, n, density=0.03, random_state=7, format="csr")
    A = A + scipy.sparse.eye(n) * 10
    x0 = rng.standard_normal(n)
    x = sparse_lu_solve(SparseMatrix.from_scipy(A), A @ x0)
    assert np.max(np.abs(x - x0)) <= 1e-9 * np.max(np.abs(x0))
