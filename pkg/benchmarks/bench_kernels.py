"""Time the compiled kernels against the numpy fallback on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from mdst import kernels


def lif_case(T, B, M, rng):
    current = rng.normal(1.0, 1.0, size=(T, B, M))
    theta = rng.uniform(0.5, 1.5, size=(T, B))
    v0 = np.zeros((B, M))
    spikes, upre, _ = kernels.lif_forward(current, theta, 0.5, 0.5, 0.0, v0, backend="python")
    grad = rng.normal(size=(T, B, M))
    return {
        "lif_forward": lambda backend: kernels.lif_forward(current, theta, 0.5, 0.5, 0.0, v0, backend=backend),
        "lif_backward": lambda backend: kernels.lif_backward(grad, v0, upre, spikes, theta, 0.5, 0.5, 0.0,
                                                             backend=backend),
    }


def egm_case(F, P, rng):
    logs = np.cumsum(rng.normal(0.0, 0.2, size=(F, P)), axis=0)
    return {"egm_emit": lambda backend: kernels.egm_emit(logs, 0.3, backend=backend)}


def same(a, b):
    return all(np.allclose(x, y, rtol=1e-12, atol=1e-13) for x, y in zip(a, b))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    try:
        kernels.get_backend("compiled")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    cases = [(f"T=8 B=32 M={m}", lif_case(8, 32, m, rng)) for m in (256, 1024, 4096)]
    cases += [(f"F=16 P={p}", egm_case(16, p, rng)) for p in (1024, 16384)]
    print(f"{'kernel':<14}{'shape':<20}{'python ms':>11}{'compiled ms':>13}{'speedup':>9}  match")
    for shape, fns in cases:
        for name, fn in fns.items():
            times = {}
            for backend in ("python", "compiled"):
                number = 3
                times[backend] = min(timeit.repeat(lambda: fn(backend), number=number, repeat=args.repeat)) / number
            match = same(fn("python"), fn("compiled"))
            print(f"{name:<14}{shape:<20}{times['python'] * 1e3:>11.2f}{times['compiled'] * 1e3:>13.2f}"
                  f"{times['python'] / times['compiled']:>8.1f}x  {'yes' if match else 'NO'}")


if __name__ == "__main__":
    main()
