"""Sparse symmetric matrices, intrinsic CAR precisions, and factorization.

The smoothness priors used throughout the package are intrinsic conditional
autoregressions on the pixel lattice: the precision penalizes squared
differences between 4-neighbors, has every row summing to zero, and is rank
n-1 (constants are free).  Those priors are never factorized alone; callers
always add a full-rank data term first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class NotPositiveDefiniteError(ValueError):
    """Factorization hit a nonpositive pivot; ``index`` is the failing row/column.

    When the factorization aborts on an exactly zero pivot the solver does
    not report which column broke; ``index`` is -1 in that case.
    """

    def __init__(self, index: int, pivot: float):
        where = f"at index {index}" if index >= 0 else "at an unreported index"
        super().__init__(f"matrix is not positive definite: pivot {pivot:.3e} {where}")
        self.index = int(index)
        self.pivot = float(pivot)


class SparseSym:
    """Symmetric sparse matrix assembled as upper-triangle triplets.

    Only entries with row <= col are stored; the lower triangle is implied.
    ``add`` may be called repeatedly for the same (row, col); duplicates are
    summed by ``finalize``, after which the matrix is immutable.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"dimension must be positive, got {n}")
        self.n = int(n)
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._upper: sp.csr_matrix | None = None

    def add(self, row: int, col: int, value: float) -> None:
        if self._upper is not None:
            raise RuntimeError("matrix already finalized")
        if not (0 <= row <= col < self.n):
            raise IndexError(f"entry ({row}, {col}) outside upper triangle of size {self.n}")
        if not np.isfinite(value):
            raise ValueError(f"non-finite entry at ({row}, {col})")
        self._rows.append(row)
        self._cols.append(col)
        self._vals.append(float(value))

    def finalize(self) -> "SparseSym":
        if self._upper is None:
            coo = sp.coo_matrix(
                (self._vals, (self._rows, self._cols)), shape=(self.n, self.n)
            )
            self._upper = coo.tocsr()  # sums duplicate triplets
            self._rows = self._cols = self._vals = []
        return self

    @property
    def finalized(self) -> bool:
        return self._upper is not None

    def _require_finalized(self) -> sp.csr_matrix:
        if self._upper is None:
            raise RuntimeError("finalize() the matrix before using it")
        return self._upper

    def entries(self) -> list[tuple[int, int, float]]:
        """Upper-triangle triplets after finalization, duplicates merged."""
        upper = self._require_finalized().tocoo()
        return list(zip(upper.row.tolist(), upper.col.tolist(), upper.data.tolist()))

    def to_csc(self) -> sp.csc_matrix:
        """Full (both-triangles) matrix in compressed column form."""
        upper = self._require_finalized()
        strict = sp.triu(upper, k=1)
        return (upper + strict.T).tocsc()

    def to_dense(self) -> np.ndarray:
        return self.to_csc().toarray()

    def scaled(self, factor: float) -> "SparseSym":
        """New finalized matrix equal to ``factor`` times this one."""
        upper = self._require_finalized().tocoo()
        out = SparseSym(self.n)
        out._upper = (upper * float(factor)).tocsr()
        return out

    def __add__(self, other: "SparseSym") -> "SparseSym":
        if not isinstance(other, SparseSym):
            return NotImplemented
        if other.n != self.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
        out = SparseSym(self.n)
        out._upper = (self._require_finalized() + other._require_finalized()).tocsr()
        return out

    @classmethod
    def from_upper_csr(cls, upper: sp.spmatrix) -> "SparseSym":
        n = upper.shape[0]
        out = cls(n)
        out._upper = sp.csr_matrix(upper)
        return out


@dataclass(frozen=True)
class Lattice2D:
    """A rows x cols pixel lattice with implicit 4-neighborhood adjacency."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"lattice dimensions must be positive, got {self.rows}x{self.cols}")

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def index(self, i: int, j: int) -> int:
        return i * self.cols + j

    def edges(self) -> np.ndarray:
        """All lattice edges as (site, right-or-down neighbor) index pairs.

        Each edge appears exactly once, oriented toward the larger index.
        """
        idx = np.arange(self.n).reshape(self.rows, self.cols)
        horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
        vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
        return np.concatenate([horiz, vert], axis=0)

    def neighbor_counts(self) -> np.ndarray:
        counts = np.full((self.rows, self.cols), 4, dtype=np.int64)
        counts[0, :] -= 1
        counts[-1, :] -= 1
        counts[:, 0] -= 1
        counts[:, -1] -= 1
        return counts.ravel()


def car_precision(lat: Lattice2D, alpha: float) -> SparseSym:
    """Intrinsic CAR precision on the lattice: diag(neighbor count), -1 per edge, times alpha^2.

    The structure is built in integer arithmetic so the null space (constants)
    is exact: every row sums to 0 before and after the alpha^2 scaling.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    q1 = car_precision_unit(lat)
    if alpha == 1.0:
        return q1
    return q1.scaled(float(alpha) ** 2)


def car_precision_unit(lat: Lattice2D) -> SparseSym:
    """The alpha=1 CAR precision; exact integer entries."""
    n = lat.n
    edges = lat.edges() if n > 1 else np.empty((0, 2), dtype=np.int64)
    rows = np.concatenate([np.arange(n), edges[:, 0]])
    cols = np.concatenate([np.arange(n), edges[:, 1]])
    vals = np.concatenate(
        [lat.neighbor_counts().astype(np.float64), np.full(len(edges), -1.0)]
    )
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    return SparseSym.from_upper_csr(upper)


def quad_form(q: SparseSym, x) -> float:
    """The quadratic form x'Qx."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (q.n,):
        raise ValueError(f"expected a vector of length {q.n}, got shape {x.shape}")
    upper = q._require_finalized()
    strict = sp.triu(upper, k=1)
    # diagonal part once, each off-diagonal pair contributes twice
    return float(x @ (upper @ x) + x @ (strict.T @ x))


class Factor:
    """Cholesky-style factorization of an SPD sparse matrix.

    Wraps a diagonal-pivoting symmetric-mode LU with a fill-reducing
    ordering; for a positive definite input the pivots are the squared
    Cholesky diagonal, giving the log-determinant for free.  Immutable;
    concurrent solves are safe.
    """

    def __init__(self, lu, n: int, jitter: float):
        self._lu = lu
        self.n = n
        self.jitter = float(jitter)
        diag = lu.U.diagonal()
        bad = np.where(diag <= 0)[0]
        if bad.size:
            k = int(bad[0])
            raise NotPositiveDefiniteError(index=int(lu.perm_c[k]), pivot=float(diag[k]))
        self._log_det = float(np.sum(np.log(diag)))

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise ValueError(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        return self._lu.solve(b)

    @property
    def log_det(self) -> float:
        return self._log_det


def factorize(q: SparseSym, jitter: float = 0.0) -> Factor:
    """Factor Q + jitter*I; raises NotPositiveDefiniteError on failure."""
    if jitter < 0:
        raise ValueError(f"jitter must be nonnegative, got {jitter}")
    mat = q.to_csc()
    if jitter > 0:
        mat = (mat + jitter * sp.identity(q.n, format="csc")).tocsc()
    mat.sort_indices()
    try:
        lu = splu(
            mat,
            diag_pivot_thresh=0.0,
            permc_spec="MMD_AT_PLUS_A",
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:
        if "singular" in str(exc):
            raise NotPositiveDefiniteError(index=-1, pivot=0.0) from exc
        raise
    return Factor(lu, q.n, jitter)


def solve(f: Factor, b) -> np.ndarray:
    return f.solve(b)


def log_det(f: Factor) -> float:
    return f.log_det


def marginal_variances(f: Factor, indices, block: int = 256) -> np.ndarray:
    """Selected diagonal entries of the factored matrix's inverse.

    Solves against blocks of identity columns; cost is one triangular solve
    pair per requested index, so ask only for the indices you need.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= f.n):
        raise IndexError(f"index out of range for dimension {f.n}")
    out = np.empty(idx.size, dtype=np.float64)
    for start in range(0, idx.size, block):
        sel = idx[start : start + block]
        rhs = np.zeros((f.n, sel.size))
        rhs[sel, np.arange(sel.size)] = 1.0
        sol = f.solve(rhs)
        out[start : start + sel.size] = sol[sel, np.arange(sel.size)]
    return out
