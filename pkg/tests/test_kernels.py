import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mtlvc import _kernels_py, kernels

try:
    from mtlvc import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

IMPLS = [pytest.param(_kernels_py, id="python")]
if _ckernels is not None:
    IMPLS.append(pytest.param(_ckernels, id="cython"))


def brute_edit_distance(a, b):
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def brute_segment(scores, dmin, dmax, nominal, penalty):
    """Enumerate every segmentation and labelling of a short sequence."""
    n, k = scores.shape
    best, best_segs = -np.inf, None

    def rec(t, acc, segs):
        nonlocal best, best_segs
        if t == n:
            if acc > best + 1e-12:
                best, best_segs = acc, list(segs)
            return
        for lab in range(k):
            for d in range(dmin[lab], dmax[lab] + 1):
                if t + d > n:
                    break
                gain = scores[t : t + d, lab].sum() - penalty * abs(d - nominal[lab])
                segs.append((lab, t, t + d))
                rec(t + d, acc + gain, segs)
                segs.pop()

    rec(0, 0.0, [])
    return best, best_segs


def seg_score(scores, segs, nominal, penalty):
    return sum(scores[s:e, k].sum() - penalty * abs((e - s) - nominal[k]) for k, s, e in segs)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", IMPLS)
def test_edit_distance_examples(impl):
    assert impl.edit_distance([1, 2, 3], [1, 2, 3]) == 0
    assert impl.edit_distance([1, 2, 3], [1, 9, 3]) == 1
    assert impl.edit_distance([1, 2, 3], []) == 3
    assert impl.edit_distance([], [4, 5]) == 2


@pytest.mark.parametrize("impl", IMPLS)
@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=6), st.lists(st.integers(0, 3), max_size=6))
def test_edit_distance_matches_recursion(impl, a, b):
    assert impl.edit_distance(a, b) == brute_edit_distance(tuple(a), tuple(b))


@pytest.mark.parametrize("impl", IMPLS)
@pytest.mark.parametrize("seed", range(12))
def test_segment_dp_is_optimal(impl, seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(1, 9)), int(rng.integers(1, 4))
    scores = rng.normal(size=(n, k))
    dmin = rng.integers(1, 3, size=k)
    dmin[0] = 1  # some label can always fill the sequence
    dmax = dmin + rng.integers(0, 3, size=k)
    nominal = dmin + 1
    cum = np.vstack([np.zeros((1, k)), np.cumsum(scores, axis=0)])
    segs = impl.segment_dp(cum, dmin, dmax, nominal, 0.3)
    best, _ = brute_segment(scores, dmin, dmax, nominal, 0.3)
    assert segs[0, 1] == 0 and segs[-1, 2] == n
    assert np.all(segs[1:, 1] == segs[:-1, 2])
    assert seg_score(scores, segs.tolist(), nominal, 0.3) == pytest.approx(best, abs=1e-9)


def test_segment_dp_empty():
    out = kernels.segment_dp(np.zeros((1, 3)), [1, 1, 1], [2, 2, 2], [1, 1, 1], 0.0)
    assert out.shape == (0, 3)


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_backends_agree_exactly(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(0, 40)), int(rng.integers(1, 10))
    scores = np.round(rng.normal(size=(n, k)), 1)  # rounding provokes ties
    cum = np.vstack([np.zeros((1, k)), np.cumsum(scores, axis=0)])
    dmin = rng.integers(1, 4, size=k)
    dmin[0] = 1
    dmax = dmin + rng.integers(0, 3, size=k)
    nominal = np.clip(dmin + 1, dmin, dmax)
    a = _kernels_py.segment_dp(cum, dmin, dmax, nominal, 0.05)
    b = _ckernels.segment_dp(cum, dmin, dmax, nominal, 0.05)
    np.testing.assert_array_equal(a, b)
    x = rng.integers(0, 5, size=int(rng.integers(0, 20)))
    y = rng.integers(0, 5, size=int(rng.integers(0, 20)))
    assert _kernels_py.edit_distance(x, y) == _ckernels.edit_distance(x, y)
