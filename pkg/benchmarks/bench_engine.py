"""Events per second of the compiled kernel against the pure-Python one.

    python3 benchmarks/bench_engine.py --events 200000

Both backends run the same fig1 path (same seed), so the final states
must agree; the script checks that before printing the speedup.
"""

import argparse
import time

from lifonet.engine import InitialCondition, StopRule, available_backends, init_state
from lifonet.model import build_fig1, build_fig2


def bench(spec, backend, events, seed, init):
    state = init_state(spec, init, seed=seed, backend=backend)
    t0 = time.perf_counter()
    tr = state.run(StopRule(max_events=events))
    dt = time.perf_counter() - t0
    return tr.steps / dt, dt, state.class_counts(), tr.t_end


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--events", type=int, default=200_000)
    p.add_argument("--M", type=float, default=100.0)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--fig2", action="store_true", help="benchmark the stage-expanded network")
    args = p.parse_args(argv)

    spec = build_fig2(args.M, args.delta) if args.fig2 else build_fig1(args.M, args.delta)
    init = InitialCondition({"2": 1000})
    backends = available_backends()
    results = {}
    for b in backends:
        n = args.events if b == "cython" else max(1, args.events // 10)
        rate, dt, counts, t_end = bench(spec, b, n, args.seed, init)
        results[b] = rate
        print(f"{b:>7}: {n:>9d} events in {dt:7.3f} s  -> {rate:12.0f} events/s")
    if len(backends) == 2:
        n = max(1, args.events // 10)
        a = bench(spec, "cython", n, args.seed, init)
        b = bench(spec, "python", n, args.seed, init)
        same = a[2] == b[2] and a[3] == b[3]
        print(f"same final state over {n} events: {same}")
        print(f"speedup: {results['cython'] / results['python']:.1f}x")


if __name__ == "__main__":
    main()
