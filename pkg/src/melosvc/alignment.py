"""Dynamic time warping of 1-D contours.

Used by the pitch metrics to align voiced log-f0 subsequences before
correlation.  Local cost is the absolute difference, steps are
(1, 0), (0, 1), (1, 1), and both endpoints are anchored, so the path
covers every frame of both contours.  Ties between predecessors resolve
toward the diagonal, then the vertical step, making the path unique and
deterministic.

Two interchangeable kernels exist: a Cython build (``melosvc._dtw``)
and a pure-Python fallback.  Selection happens once at import;
``BACKEND`` names the active one.  Both produce bitwise-identical
results; the compiled one is just faster (see ``benchmarks/``).
"""

from __future__ import annotations

import numpy as np

from .errors import AlignmentError

try:
    from ._dtw import dtw_alignment as _dtw_alignment

    BACKEND = "cython"
except ImportError:  # built without the extension
    from ._dtw_py import dtw_alignment as _dtw_alignment

    BACKEND = "python"


def _as_contour(values, label: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise AlignmentError(f"{label} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise AlignmentError(f"{label} is empty")
    if not np.all(np.isfinite(arr)):
        raise AlignmentError(f"{label} contains non-finite values")
    return arr


def dtw_path(x, y) -> tuple[float, np.ndarray]:
    """Accumulated cost and the optimal path as an ``(steps, 2)`` array.

    The path starts at ``(0, 0)``, ends at ``(len(x)-1, len(y)-1)``, and
    both index columns are non-decreasing.
    """
    cx = _as_contour(x, "x")
    cy = _as_contour(y, "y")
    cost, path = _dtw_alignment(cx, cy)
    return float(cost), np.asarray(path, dtype=np.int64)


def dtw_cost(x, y) -> float:
    """Accumulated cost of the optimal alignment."""
    return dtw_path(x, y)[0]


def align(x, y) -> tuple[np.ndarray, np.ndarray, float]:
    """Aligned value pairs ``(x[path_i], y[path_j])`` and the path cost."""
    cx = _as_contour(x, "x")
    cy = _as_contour(y, "y")
    cost, path = _dtw_alignment(cx, cy)
    idx = np.asarray(path, dtype=np.int64)
    return cx[idx[:, 0]], cy[idx[:, 1]], float(cost)
