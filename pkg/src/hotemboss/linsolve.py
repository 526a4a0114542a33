"""Sparse symmetric linear algebra: CSR storage, preconditioned CG, ILU(0), Jacobi.

Matrices are ``scipy.sparse.csr_matrix`` objects with sorted column indices.
The conjugate-gradient recurrence and the ILU(0) factorization are implemented
here; the ILU kernels are compiled with numba because they are inherently
row-sequential.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for linear-solver failures."""


class CgBreakdown(SolverError):
    """Non-positive curvature ``p.Ap <= 0``: the operator is not SPD."""


class CgNotConverged(SolverError):
    """Iteration limit reached before the requested tolerance."""


class ZeroPivotError(SolverError):
    def __init__(self, row: int):
        super().__init__(f"ILU(0) zero pivot in row {row}")
        self.row = row


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    preconditioner: str


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A, dtype=float)
    if not A.has_sorted_indices:
        A.sort_indices()
    return A


def matvec(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape} vs vector {x.shape}")
    return A @ x


@numba.njit(cache=True)
def _ilu0_kernel(n, indptr, indices, data, diag_ptr):
    """In-place ILU(0) on a copy of the CSR values; returns -1 or the failing row."""
    work = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        for p in range(start, end):
            work[indices[p]] = p
        for p in range(start, end):
            k = indices[p]
            if k >= i:
                break
            pivot = data[diag_ptr[k]]
            if pivot == 0.0:
                return k
            lik = data[p] / pivot
            data[p] = lik
            for q in range(diag_ptr[k] + 1, indptr[k + 1]):
                pos = work[indices[q]]
                if pos >= 0:
                    data[pos] -= lik * data[q]
        for p in range(start, end):
            work[indices[p]] = -1
        if data[diag_ptr[i]] == 0.0:
            return i
    return -1


@numba.njit(cache=True)
def _ilu0_apply(n, indptr, indices, data, diag_ptr, r):
    z = np.empty(n)
    for i in range(n):
        acc = r[i]
        for p in range(indptr[i], diag_ptr[i]):
            acc -= data[p] * z[indices[p]]
        z[i] = acc
    for i in range(n - 1, -1, -1):
        acc = z[i]
        for p in range(diag_ptr[i] + 1, indptr[i + 1]):
            acc -= data[p] * z[indices[p]]
        z[i] = acc / data[diag_ptr[i]]
    return z


def _diagonal_pointers(A: sp.csr_matrix) -> np.ndarray:
    """Position of each diagonal entry in ``A.data`` (indices must be sorted)."""
    n = A.shape[0]
    rows = np.repeat(np.arange(n), np.diff(A.indptr))
    hit = np.flatnonzero(A.indices == rows)
    has = np.zeros(n, dtype=bool)
    has[rows[hit]] = True
    if not has.all():
        raise ZeroPivotError(int(np.flatnonzero(~has)[0]))
    ptr = np.empty(n, dtype=np.int64)
    ptr[rows[hit]] = hit
    return ptr


class Ilu0:
    """Incomplete LU factorization with the sparsity pattern of ``A`` (no fill).

    For symmetric positive definite input the plain factorization can still
    produce non-positive pivots (elasticity matrices are not M-matrices), which
    makes the preconditioner indefinite and CG unreliable. With ``shift=True``
    the factorization is then repeated on ``A + alpha diag(A)`` with ``alpha``
    growing from 1e-3 until every pivot is positive (a Manteuffel shift). The
    pattern is unchanged, and ``alpha`` stays zero whenever the plain
    factorization already has positive pivots. The shift used is kept in
    ``self.shift``.
    """

    kind = "ilu0"
    max_shift = 1.0

    def __init__(self, A, shift: bool = True):
        A = as_csr(A)
        n = A.shape[0]
        self.n = n
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        self.diag_ptr = _diagonal_pointers(A)
        base = A.data.astype(float)
        zero = np.flatnonzero(base[self.diag_ptr] == 0.0)
        if zero.size:
            raise ZeroPivotError(int(zero[0]))
        alpha = 0.0
        while True:
            data = base.copy()
            data[self.diag_ptr] *= 1.0 + alpha
            bad = _ilu0_kernel(n, self.indptr, self.indices, data, self.diag_ptr)
            if not shift:
                if bad >= 0:
                    raise ZeroPivotError(int(bad))
                break
            if bad < 0 and np.all(data[self.diag_ptr] > 0.0):
                break
            alpha = 1e-3 if alpha == 0.0 else 2.0 * alpha
            if alpha > self.max_shift:
                raise ZeroPivotError(int(bad) if bad >= 0 else int(np.argmin(data[self.diag_ptr])))
        self.data = data
        self.shift = alpha

    def __call__(self, r):
        return _ilu0_apply(self.n, self.indptr, self.indices, self.data, self.diag_ptr, np.ascontiguousarray(r))

    def factors(self):
        """Return ``(L, U)`` as CSR matrices, with ``L`` unit lower triangular."""
        M = sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        L = sp.tril(M, k=-1, format="csr") + sp.identity(self.n, format="csr")
        U = sp.triu(M, k=0, format="csr")
        return L, U


def ilu0_factor(A, shift: bool = True) -> Ilu0:
    return Ilu0(A, shift)


class Jacobi:
    kind = "jacobi"

    def __init__(self, A):
        d = as_csr(A).diagonal()
        if np.any(d == 0.0):
            raise ZeroPivotError(int(np.flatnonzero(d == 0.0)[0]))
        self.inv_diag = 1.0 / d

    def __call__(self, r):
        return self.inv_diag * r


class Identity:
    kind = "none"

    def __init__(self, A=None):
        pass

    def __call__(self, r):
        return r.copy()


PRECONDITIONERS = {"ilu0": Ilu0, "jacobi": Jacobi, "none": Identity}


def make_preconditioner(A, kind: str = "ilu0"):
    try:
        return PRECONDITIONERS[kind](A)
    except KeyError:
        raise ValueError(f"unknown preconditioner {kind!r}") from None


def cg_solve(A, b, tol: float = 1e-10, max_iter: int | None = None, preconditioner="ilu0", x0=None,
             callback=None):
    """Preconditioned conjugate gradient for SPD ``A``.

    ``preconditioner`` is a kind name (``"ilu0"``, ``"jacobi"``, ``"none"``) or
    an already-built preconditioner object. Convergence is on the true relative
    residual ``||b - A x|| / ||b||``. ``callback(x)``, if given, is called
    with the current iterate after every iteration.

    Returns
    -------
    x, SolveReport
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: matrix {A.shape} vs rhs {b.shape}")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    M = make_preconditioner(A, preconditioner) if isinstance(preconditioner, str) else preconditioner
    kind = getattr(M, "kind", type(M).__name__)
    if max_iter is None:
        max_iter = max(10 * n, 100)

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, kind)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    it = 0
    # The recursive residual can drift from the true one; allow a couple of restarts.
    for _restart in range(3):
        if rel <= tol:
            break
        z = M(r)
        p = z.copy()
        rz = r @ z
        while it < max_iter:
            Ap = A @ p
            pAp = p @ Ap
            if not pAp > 0.0:
                raise CgBreakdown(f"non-positive curvature p.Ap = {pAp:.3e} at iteration {it}")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            it += 1
            if callback is not None:
                callback(x)
            if np.linalg.norm(r) <= tol * bnorm:
                break
            z = M(r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        r = b - A @ x
        rel = np.linalg.norm(r) / bnorm
        if it >= max_iter:
            break
    if rel > tol:
        raise CgNotConverged(f"CG stopped after {it} iterations at relative residual {rel:.3e} (tol {tol:.1e})")
    return x, SolveReport(it, float(rel), kind)


def apply_constraints(A, b, dofs, values):
    """Eliminate prescribed DOFs while keeping symmetry.

    Rows and columns of constrained DOFs are zeroed and their diagonal set to
    one; the known values are lifted into the right-hand side. The sparsity
    pattern is preserved.
    """
    A = as_csr(A).copy()
    b = np.array(b, dtype=float)
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
    if dofs.size == 0:
        return A, b
    u = np.zeros(A.shape[0])
    u[dofs] = values
    b -= A @ u
    mask = np.zeros(A.shape[0], dtype=bool)
    mask[dofs] = True
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    kill = mask[rows] | mask[A.indices]
    A.data[kill] = 0.0
    A.data[kill & (rows == A.indices)] = 1.0
    b[dofs] = values
    return A, b


def export_matrix_market(path, A, b=None):
    """Debug aid: write ``A`` (and ``b``) in MatrixMarket format."""
    import scipy.io

    scipy.io.mmwrite(str(path), as_csr(A))
    if b is not None:
        scipy.io.mmwrite(str(path) + ".rhs", np.asarray(b).reshape(-1, 1))


class PatternAssembler:
    """Scatter element matrices into a fixed CSR pattern.

    The mapping from ``(element, local i, local j)`` to positions in the CSR
    value array is computed once; each assembly is then a single weighted
    bincount in a fixed order, which keeps repeated assemblies deterministic.
    """

    def __init__(self, element_dofs: np.ndarray, n_dofs: int, extra_dofs: np.ndarray | None = None):
        element_dofs = np.asarray(element_dofs, dtype=np.int64)
        ne, nd = element_dofs.shape
        rows = np.repeat(element_dofs, nd, axis=1).ravel()
        cols = np.tile(element_dofs, (1, nd)).ravel()
        # Diagonal entries for every DOF so that constraint elimination and
        # node-local contact blocks always fit in the pattern.
        diag = np.arange(n_dofs, dtype=np.int64)
        blk_r, blk_c = [diag], [diag]
        if extra_dofs is not None:
            extra = np.asarray(extra_dofs, dtype=np.int64)
            k = extra.shape[1]
            blk_r.append(np.repeat(extra, k, axis=1).ravel())
            blk_c.append(np.tile(extra, (1, k)).ravel())
        all_r = np.concatenate([rows] + blk_r)
        all_c = np.concatenate([cols] + blk_c)
        key = all_r * n_dofs + all_c
        uniq, inverse = np.unique(key, return_inverse=True)
        self.n = n_dofs
        self.indices = (uniq % n_dofs).astype(np.int32)
        row_of = uniq // n_dofs
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(row_of, minlength=n_dofs))]).astype(np.int32)
        self._elem_map = inverse[: rows.size]
        self._nnz = uniq.size
        self._key_lookup = uniq

    def positions(self, rows, cols) -> np.ndarray:
        key = np.asarray(rows, dtype=np.int64) * self.n + np.asarray(cols, dtype=np.int64)
        pos = np.searchsorted(self._key_lookup, key)
        if np.any(pos >= self._nnz) or np.any(self._key_lookup[np.minimum(pos, self._nnz - 1)] != key):
            raise KeyError("entry outside the assembled sparsity pattern")
        return pos

    def assemble(self, element_matrices: np.ndarray, extra_positions=None, extra_values=None) -> sp.csr_matrix:
        data = np.bincount(self._elem_map, weights=np.asarray(element_matrices).ravel(), minlength=self._nnz)
        if extra_positions is not None and len(extra_positions):
            data += np.bincount(extra_positions, weights=extra_values, minlength=self._nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))
