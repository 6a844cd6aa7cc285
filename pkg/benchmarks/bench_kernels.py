"""Compare the numpy and numba kernel paths on training-scale shapes.

Run as a script::

    python benchmarks/bench_kernels.py [--batch 128] [--target-ms 50]

Each kernel is timed per call (best of three loops, loop length sized to
``--target-ms``), once per backend. A full training step on the default
network sizing closes the report, using whichever backend is active
(``CLARE_NUMBA=0`` forces numpy).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import clare.numkit as nk
from clare import kernels
from clare.model import ClareModel, total_loss


def build_args(name: str, batch: int, rng: np.random.Generator):
    """Representative inputs: image-width activations, latent-width stats."""
    img, hidden, latent, classes = 784, 512, 64, 10
    if name == "relu_fwd":
        return (rng.standard_normal((batch, hidden)),)
    if name == "relu_bwd":
        return (rng.standard_normal((batch, hidden)), rng.standard_normal((batch, hidden)))
    if name == "sigmoid_fwd":
        return (rng.standard_normal((batch, img)),)
    if name == "sigmoid_bwd":
        y = 1.0 / (1.0 + np.exp(-rng.standard_normal((batch, img))))
        return (rng.standard_normal((batch, img)), y)
    if name == "softmax_rows":
        return (rng.standard_normal((batch, classes)),)
    if name == "softmax_xent":
        return (rng.standard_normal((batch, classes)), rng.integers(0, classes, size=batch))
    if name == "bce_logits":
        return (rng.standard_normal((batch, img)), rng.uniform(0, 1, size=(batch, img)))
    if name == "bce_probs":
        return (rng.uniform(0, 1, size=(batch, img)), rng.uniform(0.01, 0.99, size=(batch, img)))
    if name == "kl_terms":
        return (rng.standard_normal((batch, latent)), rng.uniform(-2, 2, size=(batch, latent)))
    if name == "reparam_fwd":
        return tuple(rng.standard_normal((batch, latent)) for _ in range(3))
    if name == "reparam_dlv":
        return tuple(rng.standard_normal((batch, latent)) for _ in range(3))
    if name == "sgd_step":
        n = img * hidden
        return (rng.standard_normal(n), rng.standard_normal(n), 1e-3)
    if name == "adam_step":
        n = img * hidden
        return (
            rng.standard_normal(n), rng.standard_normal(n),
            np.zeros(n), np.zeros(n), 1, 1e-3, 0.9, 0.999, 1e-8,
        )
    raise KeyError(name)


def time_call(fn, args, target_ms: float) -> float:
    """Best-of-three per-call seconds, loop sized so one pass ~ target_ms."""
    fn(*args)  # warm: first numba call compiles
    start = time.perf_counter()
    fn(*args)
    once = max(time.perf_counter() - start, 1e-8)
    iters = max(3, int(target_ms / 1000.0 / once))
    best = float("inf")
    for _ in range(3):
        start = time.perf_counter()
        for _ in range(iters):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / iters)
    return best


def fmt_us(seconds: float) -> str:
    return f"{seconds * 1e6:9.1f}"


def bench_kernels(batch: int, target_ms: float) -> None:
    rng = np.random.default_rng(0)
    have_numba = kernels.NUMBA_IMPLS is not None
    print(f"active backend: {kernels.backend_name()}   batch: {batch}")
    header = f"{'kernel':<14}{'numpy us':>10}"
    if have_numba:
        header += f"{'numba us':>10}{'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name in sorted(kernels.NUMPY_IMPLS):
        args = build_args(name, batch, rng)
        t_np = time_call(kernels.NUMPY_IMPLS[name], args, target_ms)
        line = f"{name:<14}{fmt_us(t_np)} "
        if have_numba:
            t_nb = time_call(kernels.NUMBA_IMPLS[name], args, target_ms)
            line += f"{fmt_us(t_nb)} {t_np / t_nb:8.2f}x"
        print(line)
    if not have_numba:
        print("(numba not importable; jit column skipped)")


def bench_training_step(batch: int, target_ms: float) -> None:
    model = ClareModel(class_no=10, rng=np.random.default_rng(1))
    rng = np.random.default_rng(2)
    x = rng.uniform(size=(batch, model.input_dim))
    labels = rng.integers(0, 10, size=batch)
    noise = rng.standard_normal((batch, model.d_z))
    state = nk.OptimizerState("adam", 1e-3)

    def step():
        model.tape.zero_grads()
        node, _ = total_loss(model, x, labels, noise)
        nk.backward(node, model.tape)
        nk.optimizer_step(model.tape, state)

    per_call = time_call(lambda: step(), (), target_ms)
    print()
    print(
        f"full training step (784-512-256-64, {batch} samples, "
        f"{kernels.backend_name()} backend): {per_call * 1e3:.2f} ms"
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=128)
    parser.add_argument("--target-ms", type=float, default=50.0)
    args = parser.parse_args()
    kernels.warmup()
    bench_kernels(args.batch, args.target_ms)
    bench_training_step(args.batch, args.target_ms)


if __name__ == "__main__":
    main()
