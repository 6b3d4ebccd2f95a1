"""Time the compiled segment kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--edges 20000] [--nodes 2000] [--heads 8] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from graph2sfiles import kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--edges", type=int, default=20000)
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--heads", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=20)
    a = ap.parse_args()

    rng = np.random.default_rng(0)
    seg = np.sort(rng.integers(0, a.nodes, a.edges)).astype(np.int64)
    scores = rng.standard_normal((a.edges, a.heads))
    grad = rng.standard_normal((a.edges, a.heads))
    rows = rng.standard_normal((a.edges, 64))
    n = a.nodes

    if kernels.COMPILED_KERNELS is None:
        print("compiled extension not available; only the numpy kernels can be timed")
    backends = {"numpy": kernels.NUMPY_KERNELS}
    if kernels.COMPILED_KERNELS is not None:
        backends["cython"] = kernels.COMPILED_KERNELS

    y = kernels.NUMPY_KERNELS["segment_softmax"](scores, seg, n)
    cases = {
        "segment_softmax": lambda k: k["segment_softmax"](scores, seg, n),
        "segment_softmax_backward": lambda k: k["segment_softmax_backward"](y, grad, seg, n),
        "scatter_add": lambda k: k["scatter_add"](rows, seg, n),
    }
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in cases.items():
        times = {}
        for b, ks in backends.items():
            times[b] = min(timeit.repeat(lambda: fn(ks), number=1, repeat=a.repeat)) * 1e3
        line = f"{name:28s}" + "".join(f"{times[b]:10.3f}ms" for b in backends)
        if "cython" in times:
            line += f"  {times['numpy'] / times['cython']:8.1f}x"
            ref, got = fn(backends["numpy"]), fn(backends["cython"])
            assert np.allclose(ref, got, atol=1e-12), name
        print(line)


if __name__ == "__main__":
    main()
