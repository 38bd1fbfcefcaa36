"""Sparse assembly and direct solves.

Assembly is two-phase: producers append dense local blocks to a
:class:`Triplets` buffer, and :meth:`Triplets.tocsr` merges them into a
compressed-row matrix with sorted, unique column indices.  Factorisation
is SuperLU (partial pivoting, COLAMD column ordering) through scipy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class Triplets:
    """Growable (row, col, value) buffer for a fixed matrix shape."""

    def __init__(self, shape):
        self.shape = (int(shape[0]), int(shape[1]))
        self._rows, self._cols, self._vals = [], [], []

    def add(self, local, row_dofs, col_dofs) -> None:
        """Accumulate one block or a batch of blocks.

        ``local`` has shape ``(nr, nc)`` or ``(ne, nr, nc)`` with matching
        ``row_dofs`` ``(nr,)``/``(ne, nr)`` and ``col_dofs``.
        """
        local = np.asarray(local, dtype=float)
        if local.size == 0:
            return
        rows = np.asarray(row_dofs, dtype=np.int64)
        cols = np.asarray(col_dofs, dtype=np.int64)
        if local.ndim == 2:
            local, rows, cols = local[None], rows[None], cols[None]
        if local.shape != rows.shape + cols.shape[-1:]:
            raise ValueError(f"block shape {local.shape} does not match dofs {rows.shape}, {cols.shape}")
        for arr, n in ((rows, self.shape[0]), (cols, self.shape[1])):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise IndexError(f"dof out of range [0, {n})")
        R = np.broadcast_to(rows[:, :, None], local.shape)
        C = np.broadcast_to(cols[:, None, :], local.shape)
        self._rows.append(R.ravel())
        self._cols.append(C.ravel())
        self._vals.append(local.ravel())

    def extend(self, other: "Triplets", scale: float = 1.0) -> None:
        self._rows.extend(other._rows)
        self._cols.extend(other._cols)
        self._vals.extend(v * scale for v in other._vals)

    def tocsr(self) -> sp.csr_matrix:
        if not self._rows:
            return sp.csr_matrix(self.shape)
        A = sp.coo_matrix(
            (np.concatenate(self._vals), (np.concatenate(self._rows), np.concatenate(self._cols))),
            shape=self.shape,
        ).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A


@dataclass
class LinearSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    solution: np.ndarray | None = None

    def residual(self) -> float:
        r = self.matrix @ self.solution - self.rhs
        return float(np.linalg.norm(r) / max(1.0, np.linalg.norm(self.rhs)))


def scatter_add(target: Triplets, local_matrix, row_dofs, col_dofs) -> None:
    target.add(local_matrix, row_dofs, col_dofs)


def _pivot_row(A) -> int | None:
    if A.shape[0] > 4000:
        return None
    _, _, U = sla.lu(A.toarray())
    d = np.abs(np.diag(U))
    bad = np.flatnonzero(d <= 1e-13 * max(d.max(), 1.0))
    return int(bad[0]) if bad.size else None


def factorize(matrix):
    """SuperLU factorisation; raises :class:`SingularMatrixError` on zero pivots."""
    A = sp.csc_matrix(matrix)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        row = _pivot_row(A)
        raise SingularMatrixError(f"singular matrix (pivot row {row}): {exc}", row) from exc
    d = np.abs(lu.U.diagonal())
    scale = max(abs(A).max(), np.finfo(float).tiny)
    tiny = np.flatnonzero(d <= 1e-14 * scale)
    if tiny.size:
        # U is permuted by perm_r on rows
        row = int(np.argsort(lu.perm_r)[tiny[0]])
        raise SingularMatrixError(f"numerically singular matrix, tiny pivot at row {row}", row)
    return lu


def lu_solve(system: LinearSystem, lu=None, refine: int = 3) -> np.ndarray:
    """Solve ``system`` in place and return the solution.

    One sweep of iterative refinement is always taken and up to ``refine``
    sweeps in total while the relative residual exceeds ``1e-14``; the
    unrefined LU solution can carry a row-unbalanced error that a small
    global residual hides.
    """
    A = system.matrix
    if lu is None:
        lu = factorize(A)
    b = np.asarray(system.rhs, dtype=float)
    x = lu.solve(b)
    bnorm = max(1.0, np.linalg.norm(b))
    for i in range(refine):
        r = b - A @ x
        if i > 0 and np.linalg.norm(r) / bnorm <= 1e-14:
            break
        x = x + lu.solve(r)
    system.solution = x
    res = system.residual()
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SingularMatrixError(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return x


class ReusedFactorization:
    """Direct solves for a sequence of slowly varying matrices.

    The last LU factorisation is kept and used to drive iterative
    refinement against the current matrix; a fresh factorisation is made
    whenever the refinement does not reach ``tol`` within ``max_iter``
    sweeps, or after ``max_age`` reuses.  Accepted solutions therefore
    solve the current system to ``tol`` relative residual, far below
    :data:`RESIDUAL_TOL`.
    """

    def __init__(self, tol: float = 1e-13, max_iter: int = 6, max_age: int = 50):
        self.tol, self.max_iter, self.max_age = tol, max_iter, max_age
        self._lu = None
        self._age = 0
        self.n_factorizations = 0

    def _refine(self, A, b, lu):
        bnorm = max(1.0, np.linalg.norm(b))
        x = lu.solve(b)
        for _ in range(self.max_iter):
            r = b - A @ x
            if not np.all(np.isfinite(r)):
                return x, False
            if np.linalg.norm(r) / bnorm <= self.tol:
                return x, True
            x = x + lu.solve(r)
        return x, np.linalg.norm(b - A @ x) / bnorm <= self.tol

    def solve(self, system: LinearSystem) -> np.ndarray:
        A = system.matrix
        b = np.asarray(system.rhs, dtype=float)
        if self._lu is not None and self._age < self.max_age and self._lu.shape == A.shape:
            x, ok = self._refine(A, b, self._lu)
            if ok:
                self._age += 1
                system.solution = x
                return x
        self._lu = factorize(A)
        self._age = 0
        self.n_factorizations += 1
        return lu_solve(system, self._lu)


def dump_coo(matrix, path) -> None:
    """Write ``row col value`` lines for every stored entry."""
    A = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {v:.17g}\n")
