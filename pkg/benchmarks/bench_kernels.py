"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from mtlvc import _kernels_py
from mtlvc.synthcorpus import Articulator, OracleDecoder, render_utterance

try:
    from mtlvc import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _segment_case(rng: np.random.Generator):
    a = Articulator.default()
    tokens = (rng.integers(0, a.vocab_size, size=10) + 2).tolist()
    mel, _ = render_utterance(tokens, 1, a)
    dec = OracleDecoder(a)
    scores = dec.frame_scores(mel.values)
    cum = np.vstack([np.zeros((1, scores.shape[1])), np.cumsum(scores, axis=0)])
    return cum, dec


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    a = rng.integers(0, 30, size=400).tolist()
    b = rng.integers(0, 30, size=400).tolist()
    cum, dec = _segment_case(rng)
    seg_args = (cum, dec.dmin, dec.dmax, dec.nominal, dec.duration_penalty)

    cases = {
        "edit_distance(400x400)": lambda impl: impl.edit_distance(a, b),
        "segment_dp(10 tokens)": lambda impl: impl.segment_dp(*seg_args),
    }
    print(f"{'kernel':28s} {'python':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, call in cases.items():
        py = _time(lambda: call(_kernels_py), args.repeat)
        if _ckernels is None:
            print(f"{name:28s} {py * 1e3:9.2f}ms {'n/a':>10s}")
            continue
        cy = _time(lambda: call(_ckernels), args.repeat)
        print(f"{name:28s} {py * 1e3:9.2f}ms {cy * 1e3:9.2f}ms {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
