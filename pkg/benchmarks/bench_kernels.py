"""Compare the compiled and numpy kernel backends.

Times each hot kernel on both backends, checks that their outputs agree,
and times one forward/backward pass of the default model with each
backend patched in.

    python benchmarks/bench_kernels.py [--repeat 20] [--size 48] [--batch 16]
"""
import argparse
import json
import sys
import time

import numpy as np

from slwsr import kernels
from slwsr import tensor as T
from slwsr.config import ModelConfig
from slwsr.model import build_model

KERNEL_NAMES = ("im2col", "col2im", "depthwise_forward", "depthwise_backward")


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_calls(mod, x, w3, b, cols, g):
    shape = x.shape
    return {
        "im2col": lambda: mod.im2col(x, 3, 1, 1),
        "col2im": lambda: mod.col2im(cols, shape, 3, 1, 1),
        "depthwise_forward": lambda: mod.depthwise_forward(x, w3, b),
        "depthwise_backward": lambda: mod.depthwise_backward(x, w3, g),
    }


def check_agreement(backends, x, w3, b, cols, g):
    outs = {name: {k: f() for k, f in kernel_calls(mod, x, w3, b, cols, g).items()}
            for name, mod in backends.items()}
    names = list(outs)
    worst = 0.0
    for k in KERNEL_NAMES:
        a, c = outs[names[0]][k], outs[names[-1]][k]
        pairs = zip(a, c) if isinstance(a, tuple) else [(a, c)]
        for u, v in pairs:
            worst = max(worst, float(np.abs(u - v).max() / max(np.abs(u).max(), 1e-12)))
    return worst


def model_step(model, x, target):
    model.zero_grad()
    loss = T.l1_loss(model(T.Tensor(x)), T.Tensor(target))
    loss.backward()


def use_backend(mod):
    for name in KERNEL_NAMES:
        setattr(kernels, name, getattr(mod, name))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--size", type=int, default=48, help="spatial size of the kernel inputs")
    p.add_argument("--channels", type=int, default=32, help="channels of the kernel inputs")
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--step-patch", type=int, default=32, help="LR patch size for the model step")
    p.add_argument("--step-batch", type=int, default=4)
    p.add_argument("--json", help="write results here as JSON")
    args = p.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available", file=sys.stderr)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch, args.channels, args.size, args.size)).astype(np.float32)
    w3 = rng.standard_normal((args.channels, 3, 3)).astype(np.float32)
    b = rng.standard_normal(args.channels).astype(np.float32)
    cols = backends["python"].im2col(x, 3, 1, 1)
    g = rng.standard_normal(x.shape).astype(np.float32)

    results = {"shape": list(x.shape), "max_rel_diff": check_agreement(backends, x, w3, b, cols, g), "ms": {}}
    for name, mod in backends.items():
        calls = kernel_calls(mod, x, w3, b, cols, g)
        results["ms"][name] = {k: 1e3 * best_of(f, args.repeat) for k, f in calls.items()}

    model = build_model(ModelConfig(n_feats=16), seed=0)
    lr = rng.random((args.step_batch, 3, args.step_patch, args.step_patch)).astype(np.float32)
    hr = rng.random((args.step_batch, 3, 4 * args.step_patch, 4 * args.step_patch)).astype(np.float32)
    original = {k: getattr(kernels, k) for k in KERNEL_NAMES}
    try:
        for name, mod in backends.items():
            use_backend(mod)
            results["ms"][name]["train_step"] = 1e3 * best_of(lambda: model_step(model, lr, hr),
                                                               max(3, args.repeat // 5))
    finally:
        for k, f in original.items():
            setattr(kernels, k, f)

    header = ["kernel"] + list(backends) + (["speedup"] if "cython" in backends else [])
    print(f"input {tuple(x.shape)} float32; backends agree to {results['max_rel_diff']:.1e} relative")
    print("".join(f"{h:>20}" for h in header))
    for k in KERNEL_NAMES + ("train_step",):
        row = [k] + [f"{results['ms'][n][k]:.2f} ms" for n in backends]
        if "cython" in backends:
            row.append(f"{results['ms']['python'][k] / results['ms']['cython'][k]:.2f}x")
        print("".join(f"{c:>20}" for c in row))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
