"""Dense exact linear solving over rationals.

All systems in this package are small (a handful of states per SCC block),
so plain Gaussian elimination on Fractions is both exact and fast enough.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence


class SingularSystemError(ArithmeticError):
    pass


def solve_multi(
    a: Sequence[Sequence[Fraction]], rhs: Sequence[Sequence[Fraction]]
) -> list[list[Fraction]]:
    """Solve ``a @ x = rhs`` for several right-hand-side columns at once.

    ``rhs`` is given column-wise: ``rhs[j]`` is the j-th column.  Returns the
    solution columns in the same layout.  Raises :class:`SingularSystemError`
    if ``a`` is singular.
    """
    n = len(a)
    m = len(rhs)
    # augmented rows: coefficients followed by all rhs columns
    rows = [list(a[i]) + [rhs[j][i] for j in range(m)] for i in range(n)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if rows[r][col] != 0), None)
        if pivot is None:
            raise SingularSystemError(f"singular system (column {col})")
        if pivot != col:
            rows[col], rows[pivot] = rows[pivot], rows[col]
        pv = rows[col][col]
        if pv != 1:
            rows[col] = [x / pv for x in rows[col]]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                f = rows[r][col]
                rows[r] = [x - f * y for x, y in zip(rows[r], rows[col])]
    return [[rows[i][n + j] for i in range(n)] for j in range(m)]


def solve(a: Sequence[Sequence[Fraction]], b: Sequence[Fraction]) -> list[Fraction]:
    return solve_multi(a, [list(b)])[0]
