"""Benchmark the numba kernel path against the pure-numpy fallback.

Times every hot kernel at training-relevant shapes, then one full model
forward+backward pass under each backend. Agreement between backends is
verified (to roundoff) while timing.

Usage:
    python benchmarks/bench_kernels.py [--repeats 200] [--paper-scale]
"""

import argparse
import time

import numpy as np

from stepqa import kernels
from stepqa.gradcheck import _random_bundle
from stepqa.model import Model, ModelConfig
from stepqa.tensor import Graph


def time_call(fn, repeats):
    fn()   # warm (JIT compile on the numba path)
    best = float("inf")
    for _ in range(max(3, repeats // 50)):
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def kernel_cases(shape, dtype, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape).astype(dtype)
    gy = rng.standard_normal(shape).astype(dtype)
    return {
        "softmax_rows": lambda k: k.softmax_rows(x),
        "softmax_rows_grad": lambda k, y=kernels.NUMPY_KERNELS.softmax_rows(x):
            k.softmax_rows_grad(y, gy),
        "sigmoid": lambda k: k.sigmoid(x),
        "tanh": lambda k: k.tanh(x),
        "prelu": lambda k: k.prelu(x, 0.25),
        "prelu_grad": lambda k: k.prelu_grad(x, 0.25, gy),
        "all_finite": lambda k: k.all_finite(x),
    }


def bench_kernels(shapes, dtype, repeats):
    print(f"\nkernel micro-benchmarks ({np.dtype(dtype).name}, best of runs, "
          f"{repeats} calls each)")
    header = f"{'kernel':<20}{'shape':<12}{'numpy':>12}{'numba':>12}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for shape in shapes:
        for name, call in kernel_cases(shape, dtype).items():
            got_np = call(kernels.NUMPY_KERNELS)
            got_nb = call(kernels.NUMBA_KERNELS)
            if name == "prelu_grad":
                assert np.allclose(got_np[0], got_nb[0], atol=1e-5)
            elif name != "all_finite":
                assert np.allclose(got_np, got_nb, atol=1e-5)
            t_np = time_call(lambda: call(kernels.NUMPY_KERNELS), repeats)
            t_nb = time_call(lambda: call(kernels.NUMBA_KERNELS), repeats)
            print(f"{name:<20}{str(shape):<12}{t_np * 1e6:>10.1f}us"
                  f"{t_nb * 1e6:>10.1f}us{t_np / t_nb:>8.1f}x")


def bench_model(d_h, heads, repeats):
    config = ModelConfig(d_v=d_h, d_t=d_h, d_h=d_h, heads=heads)
    model = Model.init(config, seed=0)
    bundle = _random_bundle(np.random.default_rng(1), d_h, frames=10,
                            sentences=5, candidates=4, steps=2)

    def forward_backward():
        graph = Graph()
        with graph:
            loss = model.sample_loss(bundle)
        graph.backward(loss)
        for p in model.parameters():
            p.grad = None

    print(f"\nfull model forward+backward per sample "
          f"(d_h={d_h}, heads={heads}, f=10, e=5, j=4, steps=2)")
    for backend in ("numpy", "numba"):
        with kernels.use_backend(backend):
            elapsed = time_call(forward_backward, max(5, repeats // 20))
        print(f"  {backend:<8}{elapsed * 1e3:>10.2f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--paper-scale", action="store_true",
                        help="also benchmark the model at d_h=768, 3 heads")
    args = parser.parse_args()

    if kernels.NUMBA_KERNELS is None:
        raise SystemExit("numba is not importable; nothing to compare")

    bench_kernels([(4, 64), (16, 64), (64, 256)], np.float32, args.repeats)
    bench_kernels([(16, 64)], np.float64, args.repeats)
    bench_model(d_h=64, heads=2, repeats=args.repeats)
    if args.paper_scale:
        bench_model(d_h=768, heads=3, repeats=max(20, args.repeats // 10))


if __name__ == "__main__":
    main()
