"""Throughput of the chain kernel: pure Python against the compiled extension.

    python benchmarks/bench_chain.py [--steps N] [--repeats R]

Both kernels draw from the same generator stream, so the final states must
match; the script checks that before reporting timings.
"""
import argparse
import time

import numpy as np

from dnsp import _backend
from dnsp.mcmc import Chain
from dnsp.model import KernelParams, SequenceParams, n_hidden_architecture
from dnsp.simulate import RngStream, forward_sample, initial_state


def workload():
    th = KernelParams.from_natural(2.0, 2.0, 2.0)
    arch = n_hidden_architecture(2, 2, th, th)
    sp = SequenceParams((0.3,), {n: 0.2 for n in arch.hidden_nodes()})
    _, ev = forward_sample(arch, sp, 30.0, RngStream(1).generator(0))
    return arch, sp, ev


def time_backend(name, steps, repeats):
    arch, sp, ev = workload()
    best = float("inf")
    final = None
    for _ in range(repeats):
        rng = np.random.default_rng(0)
        chain = Chain(arch, sp, ev, initial_state(arch, sp, ev, rng), rng, backend=name)
        start = time.perf_counter()
        chain.run(steps)
        best = min(best, time.perf_counter() - start)
        final = chain.state()
    return best, final, ev.n_events


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=5_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    backends = ["python"]
    try:
        _backend.kernel_class("cython")
        backends.append("cython")
    except ImportError:
        print("compiled extension not built; timing the Python kernel only")

    results = {}
    for name in backends:
        secs, state, n_ev = time_backend(name, args.steps, args.repeats)
        results[name] = (secs, state)
        print(f"{name:>7}: {args.steps / secs:>12,.0f} steps/s  ({secs:.3f} s, {n_ev} observed events)")
    if len(results) == 2:
        a, b = results["python"][1], results["cython"][1]
        same = all(a.real[n].tobytes() == b.real[n].tobytes() and a.virtual[n].tobytes() == b.virtual[n].tobytes()
                   for n in a.real)
        print(f"speed-up: {results['python'][0] / results['cython'][0]:.1f}x, identical final states: {same}")


if __name__ == "__main__":
    main()
