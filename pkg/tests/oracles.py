"""Independent reference implementations the tests compare against.

Everything here is written for clarity over speed and shares no code
with the package: exhaustive DTW path enumeration, a hand-rolled
central-difference gradient check, and hand-computed constants.
"""

import numpy as np
import torch

# Geometric mean of 200 and 220 Hz: sqrt(200 * 220).
TWO_VOTE_FUSION_HZ = 209.76176963403032

# RMSE of the min-max-normalized contours [0, 1] and [1, 0]:
# sqrt(((0-1)^2 + (1-0)^2) / 2) = 1.0.
OPPOSED_RAMP_RMSE = 1.0


def brute_force_dtw(x, y):
    """Minimum-cost monotone alignment by exhaustive enumeration.

    Walks every path from (0, 0) to (n-1, m-1) with steps (1,0), (0,1),
    (1,1), accumulating |x_i - y_j| in path order so partial sums round
    exactly like a forward dynamic program.  Exponential; keep inputs
    at length <= 8 or so.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    assert n > 0 and m > 0
    best = [np.inf]

    def walk(i, j, acc):
        acc = acc + abs(x[i] - y[j])
        if i == n - 1 and j == m - 1:
            if acc < best[0]:
                best[0] = acc
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def enumerate_monotone_paths(n, m):
    """All index paths from (0,0) to (n-1,m-1), for path-shape checks."""
    paths = []

    def walk(i, j, prefix):
        prefix = prefix + [(i, j)]
        if i == n - 1 and j == m - 1:
            paths.append(prefix)
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, prefix)
        if i + 1 < n:
            walk(i + 1, j, prefix)
        if j + 1 < m:
            walk(i, j + 1, prefix)

    walk(0, 0, [])
    return paths


def central_difference_grad(fn, x, eps=1e-5):
    """Gradient of scalar ``fn`` at double-precision tensor ``x``."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.numel()):
        orig = flat[k].item()
        flat[k] = orig + eps
        hi = fn(x).item()
        flat[k] = orig - eps
        lo = fn(x).item()
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a, b):
    denom = max(float(a.abs().max()), float(b.abs().max()), 1e-12)
    return float((a - b).abs().max()) / denom
