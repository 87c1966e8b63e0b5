"""Exact Gaussian elimination over the rationals (and dual numbers)."""

from __future__ import annotations

from typing import List, Sequence

from .errors import SingularLinearSystem
from .rational import ZERO, is_invertible


def solve(matrix: Sequence[Sequence], rhs: Sequence) -> List:
    """Solve ``matrix @ x = rhs`` exactly.

    Parameters
    ----------
    matrix : square sequence of rows
        Coefficients; any exact field elements (or duals with invertible pivots).
    rhs : sequence
        Right-hand side.

    Returns
    -------
    list
        The unique solution.

    Raises
    ------
    SingularLinearSystem
        If no pivot is found in some column.

    Notes
    -----
    The pivot is always the first row (in order) with an invertible entry in
    the current column, so results are reproducible.
    """
    n = len(matrix)
    if len(rhs) != n or any(len(r) != n for r in matrix):
        raise ValueError("matrix must be square and match the right-hand side")
    rows = [list(r) + [b] for r, b in zip(matrix, rhs)]
    for col in range(n):
        piv = None
        for r in range(col, n):
            if is_invertible(rows[r][col]):
                piv = r
                break
        if piv is None:
            raise SingularLinearSystem(f"no pivot in column {col}")
        if piv != col:
            rows[col], rows[piv] = rows[piv], rows[col]
        prow = rows[col]
        inv = 1 / prow[col]
        for r in range(n):
            if r == col:
                continue
            f = rows[r][col]
            if f:
                f = f * inv
                row = rows[r]
                for c in range(col, n + 1):
                    if prow[c]:
                        row[c] = row[c] - f * prow[c]
    return [rows[i][n] / rows[i][i] for i in range(n)]


def solve_sparse_identity_check(matrix, rhs):
    """Shortcut used when the matrix is known to be diagonal; still verifies it."""
    for i, row in enumerate(matrix):
        for j, v in enumerate(row):
            if i != j and v:
                return solve(matrix, rhs)
    out = []
    for i, b in enumerate(rhs):
        d = matrix[i][i]
        if not is_invertible(d):
            raise SingularLinearSystem(f"zero diagonal entry {i}")
        out.append(b / d if b else ZERO)
    return out


__all__ = ["solve", "solve_sparse_identity_check"]
