"""Pure-Python DTW kernel.

Fallback for :mod:`melosvc._dtw` (the Cython build of the same
algorithm).  Both kernels implement the identical recurrence with
identical tie-breaking and must return bitwise-equal costs and paths;
keep any change mirrored in ``_dtw.pyx``.

Recurrence: local cost ``|x[i] - y[j]|``, steps (1,0), (0,1), (1,1),
both endpoints anchored.  Ties prefer the diagonal predecessor, then
the vertical one.
"""

from __future__ import annotations


def dtw_alignment(x, y) -> tuple[float, list[tuple[int, int]]]:
    """Accumulated cost and alignment path for two 1-D sequences."""
    n = len(x)
    m = len(y)
    prev_row: list[float] = [0.0] * m
    rows: list[list[float]] = []
    for i in range(n):
        xi = x[i]
        row = [0.0] * m
        for j in range(m):
            cost = xi - y[j]
            if cost < 0.0:
                cost = -cost
            if i == 0 and j == 0:
                acc = cost
            elif i == 0:
                acc = row[j - 1] + cost
            elif j == 0:
                acc = prev_row[0] + cost
            else:
                best = prev_row[j - 1]
                if prev_row[j] < best:
                    best = prev_row[j]
                if row[j - 1] < best:
                    best = row[j - 1]
                acc = best + cost
            row[j] = acc
        rows.append(row)
        prev_row = row

    i = n - 1
    j = m - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = rows[i - 1][j - 1]
            up = rows[i - 1][j]
            left = rows[i][j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return rows[n - 1][m - 1], path
