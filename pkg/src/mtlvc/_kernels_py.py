"""Pure-Python implementations of the hot kernels.

Semantics (including tie-breaking) match ``_ckernels.pyx`` exactly; the
test-suite compares both on random inputs.
"""

from __future__ import annotations

import numpy as np


def segment_dp(cum, dmin, dmax, nominal, penalty):
    """Best segmentation of T frames into template-labelled segments.

    ``cum`` is the (T+1, K) prefix sum of per-frame template scores. A
    segment of template k spanning d frames scores
    ``cum[t, k] - cum[t-d, k] - penalty * |d - nominal[k]|`` and needs
    ``dmin[k] <= d <= dmax[k]``. Ties go to the lowest (k, d).

    Returns an int64 array of shape (n_segments, 3) holding (k, start, end).
    """
    cum = np.asarray(cum, dtype=np.float64)
    dmin = np.asarray(dmin, dtype=np.int64)
    dmax = np.asarray(dmax, dtype=np.int64)
    nominal = np.asarray(nominal, dtype=np.int64)
    n_frames = cum.shape[0] - 1
    n_templates = cum.shape[1]
    best = np.full(n_frames + 1, -np.inf)
    best[0] = 0.0
    back_k = np.full(n_frames + 1, -1, dtype=np.int64)
    back_d = np.zeros(n_frames + 1, dtype=np.int64)

    for t in range(1, n_frames + 1):
        top = -np.inf
        arg_k, arg_d = -1, 0
        for k in range(n_templates):
            hi = min(int(dmax[k]), t)
            for d in range(int(dmin[k]), hi + 1):
                prev = best[t - d]
                if prev == -np.inf:
                    continue
                val = prev + (cum[t, k] - cum[t - d, k]) - penalty * abs(d - nominal[k])
                if val > top:
                    top, arg_k, arg_d = val, k, d
        best[t] = top
        back_k[t] = arg_k
        back_d[t] = arg_d

    segments = []
    t = n_frames
    while t > 0:
        k = back_k[t]
        if k < 0:
            break
        d = back_d[t]
        segments.append((k, t - d, t))
        t -= d
    segments.reverse()
    return np.array(segments, dtype=np.int64).reshape(-1, 3)


def edit_distance(a, b):
    """Unit-cost Levenshtein distance between two integer sequences."""
    a = [int(x) for x in a]
    b = [int(x) for x in b]
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]
