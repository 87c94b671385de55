"""Sparse matrix storage, assembly from triplets, products, and a pivoted
direct solver for the saddle-point and Robin systems."""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SingularSystemError(RuntimeError):
    """Factorization failure; pivot_index is best-effort (-1 if unknown)."""

    def __init__(self, message: str, pivot_index: int = -1):
        super().__init__(message)
        self.pivot_index = pivot_index


@dataclasses.dataclass
class SparseMatrix:
    """Compressed-row matrix; column indices sorted and unique per row."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr),
                             shape=(self.n_rows, self.n_cols))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @staticmethod
    def from_scipy(m) -> "SparseMatrix":
        csr = m.tocsr()
        csr.sort_indices()
        csr.sum_duplicates()
        return SparseMatrix(csr.shape[0], csr.shape[1],
                            csr.indptr.astype(np.int64),
                            csr.indices.astype(np.int64),
                            csr.data.astype(np.float64))

    @property
    def nnz(self) -> int:
        return len(self.data)

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.to_scipy().T.tocsr())


class CooBuilder:
    """Accumulates (row, col, value) triplets for later assembly."""

    def __init__(self, n_rows: int, n_cols: int):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self._rows = []
        self._cols = []
        self._vals = []

    def add(self, i: int, j: int, v: float):
        self.add_batch(np.array([i]), np.array([j]), np.array([float(v)]))

    def add_batch(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if not (len(rows) == len(cols) == len(vals)):
            raise ValueError("triplet arrays must have equal length")
        if len(rows) == 0:
            return
        if rows.min() < 0 or rows.max() >= self.n_rows:
            raise IndexError("row index out of bounds")
        if cols.min() < 0 or cols.max() >= self.n_cols:
            raise IndexError("column index out of bounds")
        self._rows.append(rows)
        self._cols.append(cols)
        self._vals.append(vals)

    def triplet_arrays(self):
        if not self._rows:
            z = np.zeros(0)
            return z.astype(np.int64), z.astype(np.int64), z
        return (np.concatenate(self._rows), np.concatenate(self._cols),
                np.concatenate(self._vals))


def assemble(builder: CooBuilder) -> SparseMatrix:
    """Sum duplicate triplets into CSR form.

    The triplets are put into a canonical order (row, column, value) before
    group summation, so the result is bitwise independent of insertion
    order.
    """
    rows, cols, vals = builder.triplet_arrays()
    if len(rows) == 0:
        indptr = np.zeros(builder.n_rows + 1, dtype=np.int64)
        return SparseMatrix(builder.n_rows, builder.n_cols, indptr,
                            np.zeros(0, dtype=np.int64), np.zeros(0))
    order = np.lexsort((vals, cols, rows))
    rows = rows[order]
    cols = cols[order]
    vals = vals[order]
    new_group = np.empty(len(rows), dtype=bool)
    new_group[0] = True
    new_group[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
    starts = np.flatnonzero(new_group)
    data = np.add.reduceat(vals, starts)
    out_rows = rows[starts]
    out_cols = cols[starts]
    indptr = np.zeros(builder.n_rows + 1, dtype=np.int64)
    np.add.at(indptr, out_rows + 1, 1)
    indptr = np.cumsum(indptr)
    return SparseMatrix(builder.n_rows, builder.n_cols, indptr,
                        out_cols.astype(np.int64), data)


def add_scaled(terms) -> SparseMatrix:
    """Linear combination sum_i s_i * M_i of same-shape sparse matrices,
    given as (matrix, scale) pairs."""
    n_rows = terms[0][0].n_rows
    n_cols = terms[0][0].n_cols
    builder = CooBuilder(n_rows, n_cols)
    for M, s in terms:
        if (M.n_rows, M.n_cols) != (n_rows, n_cols):
            raise ValueError("shape mismatch in add_scaled")
        coo = M.to_scipy().tocoo()
        builder.add_batch(coo.row, coo.col, s * coo.data)
    return assemble(builder)


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise ValueError(f"dimension mismatch: {A.n_cols} vs {x.shape}")
    return A.to_scipy().dot(x)


class LUFactor:
    """Held LU factorization for repeated solves against one matrix."""

    def __init__(self, A: SparseMatrix):
        if A.n_rows != A.n_cols:
            raise ValueError("matrix must be square")
        self._A = A
        csc = A.to_scipy().tocsc()
        zero_rows = np.flatnonzero(np.diff(A.indptr) == 0)
        if len(zero_rows):
            raise SingularSystemError(
                f"structurally singular: empty row {zero_rows[0]}",
                pivot_index=int(zero_rows[0]))
        zero_cols = np.flatnonzero(np.diff(csc.indptr) == 0)
        if len(zero_cols):
            raise SingularSystemError(
                f"structurally singular: empty column {zero_cols[0]}",
                pivot_index=int(zero_cols[0]))
        try:
            self._lu = splu(csc)
        except RuntimeError as exc:
            raise SingularSystemError(
                f"factorization failed: {exc}",
                pivot_index=_pivot_from_message(str(exc))) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self._A.n_rows,):
            raise ValueError("right-hand side has wrong length")
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularSystemError(
                "numerically singular: non-finite solution",
                pivot_index=_weakest_pivot(self._lu))
        res = np.linalg.norm(spmv(self._A, x) - b)
        if res > 1e-10 * max(1.0, np.linalg.norm(b)):
            raise SingularSystemError(
                f"numerically singular: residual {res:.3e}",
                pivot_index=_weakest_pivot(self._lu))
        return x


def _pivot_from_message(msg: str) -> int:
    digits = "".join(ch if ch.isdigit() else " " for ch in msg).split()
    return int(digits[0]) if digits else -1


def _weakest_pivot(lu) -> int:
    try:
        d = np.abs(lu.U.diagonal())
        return int(np.argmin(d))
    except Exception:
        return -1


def factorize(A: SparseMatrix) -> LUFactor:
    return LUFactor(A)


def solve_direct(A: SparseMatrix, b: np.ndarray) -> np.ndarray:
    """Direct solve with partial pivoting; verifies the residual."""
    return LUFactor(A).solve(b)
