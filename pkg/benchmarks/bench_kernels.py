"""Time the compiled Monte Carlo kernels against the pure-Python fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--trials 2000] [--repeat 3]

Both backends consume identical random streams, so each pair of timings
covers exactly the same work (the script checks that the outputs agree).
"""

import argparse
import time

import numpy as np

from multilevel_readout import _backend
from multilevel_readout.ancilla import AncillaConfusion
from multilevel_readout.params import SystemParams, get_code, stream_id
from multilevel_readout.protocol import ErrorModel
from multilevel_readout.readout import ResponseTemplates, n_samples, readout_config


def bench_storage(k, n):
    out = np.zeros(n, dtype=np.int64)
    k.storage_batch(1, 2, 0, n, 5, 200e-6, 1e3, 300.0, 10, out)
    return out


def bench_reset(k, n):
    p = SystemParams()
    conf = AncillaConfusion.default()
    it = np.zeros(n, dtype=np.int64)
    fin = np.zeros(n, dtype=np.int64)
    k.reset_batch(1, 3, 0, n, 3, ErrorModel(conf).kernel_config(p), conf.cdf(), it, fin)
    return it


def bench_protocol(k, n, cycles=31):
    p = SystemParams()
    code = get_code("fock-0-3")
    model = ErrorModel()
    out = np.zeros((n, cycles), dtype=np.uint8)
    raw = np.zeros_like(out)
    its = np.zeros((n, cycles), dtype=np.uint16)
    tot = np.zeros(n)
    k.protocol_batch(1, 4, 0, n, cycles, 3, model.kernel_config(p), code.in_flip_set(p.n_max),
                     model.eps_map(code, p), model.confusion.cdf(), out, raw, its, tot)
    return out


def bench_readout(k, n):
    p = SystemParams()
    tpl = ResponseTemplates()
    dt = 20e-9
    grid = np.array([n_samples(t * 1e-6, dt) for t in (0.5, 1.0, 2.0, 4.0)], dtype=np.int64)
    counts = np.zeros((len(grid), 4), dtype=np.int64)
    k.readout_batch(1, stream_id("bench", 3), 0, n, 3, readout_config(p, tpl, dt),
                    np.ascontiguousarray(tpl.centers), tpl.cumulative_weight(int(grid[-1]), dt), grid, counts)
    return counts


CASES = {"storage": bench_storage, "reset": bench_reset, "protocol": bench_protocol, "readout": bench_readout}


def timed(fn, kernels, n, repeat):
    best, result = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(kernels, n)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    compiled, pure = _backend.kernels, _backend.fallback
    if compiled is pure:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':<10} {'trials':>8} {'compiled [s]':>13} {'fallback [s]':>13} {'speedup':>9}")
    for name, fn in CASES.items():
        tc, rc = timed(fn, compiled, args.trials, args.repeat)
        tp, rp = timed(fn, pure, args.trials, 1)
        assert np.array_equal(rc, rp), f"{name}: backends disagree"
        print(f"{name:<10} {args.trials:>8d} {tc:>13.4f} {tp:>13.4f} {tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
