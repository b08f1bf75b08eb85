"""Benchmark the compiled kernel backend against the pure-numpy twin.

Times each kernel on training-step-sized buffers plus one full encoder
training step per backend. Run from anywhere:

    python scripts/bench_backends.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from maskalign import backend
from maskalign.tensor import Tape, Tensor, backward, cross_entropy
from maskalign.train import forward_classifier
from maskalign.vit import ViTConfig, init_vit_params


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    # shapes mirror one desk-scale training step (batch 128, 65 tokens)
    x1 = rng.standard_normal(128 * 65 * 384).astype(np.float32)
    g1 = rng.standard_normal(x1.shape[0]).astype(np.float32)
    rows = np.ascontiguousarray(rng.standard_normal((128 * 3 * 65, 65)), dtype=np.float32)
    feat = np.ascontiguousarray(rng.standard_normal((128 * 65, 96)), dtype=np.float32)
    gfeat = np.ascontiguousarray(rng.standard_normal(feat.shape), dtype=np.float32)
    pred = rng.standard_normal(128 * 20 * 96).astype(np.float32)
    targ = rng.standard_normal(pred.shape[0]).astype(np.float32)
    p = rng.standard_normal(700_000).astype(np.float32)
    gp = rng.standard_normal(p.shape[0]).astype(np.float32)
    m = np.zeros_like(p)
    v = np.zeros_like(p)

    k = lambda: backend.kernels  # resolve at call time, after set_backend
    cases = {
        "gelu_fwd": lambda: k().gelu_fwd(x1),
        "gelu_bwd": lambda: k().gelu_bwd(x1, k().gelu_fwd(x1)[1], g1),
        "softmax_fwd": lambda: k().softmax_fwd(rows),
        "softmax_bwd": lambda: k().softmax_bwd(k().softmax_fwd(rows), rows),
        "layernorm_fwd": lambda: k().layernorm_fwd(feat, 1e-6),
        "layernorm_bwd": lambda: k().layernorm_bwd(
            *k().layernorm_fwd(feat, 1e-6), gfeat),
        "smooth_l1_sum": lambda: k().smooth_l1_sum(pred, targ),
        "smooth_l1_bwd": lambda: k().smooth_l1_bwd(pred, targ, 1.0),
        "adamw_update": lambda: k().adamw_update(
            p, gp, m, v, 1e-3, 0.05, 0.9, 0.95, 1e-8, 0.1, 0.05),
    }
    return cases


def train_step_case(rng):
    cfg = ViTConfig(drop_path_rate=0.1)
    params = init_vit_params(cfg, rng, num_classes=10)
    images = rng.standard_normal((128, 3, 32, 32)).astype(np.float32)
    labels = rng.integers(0, 10, 128)

    def step():
        with Tape():
            logits = forward_classifier(params, cfg, images, train=True, rng=rng)
            loss = cross_entropy(logits, labels)
            backward(loss)

    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    names = backend.available_backends()
    if names == ["python"]:
        print("compiled backend unavailable; benchmarking python only")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    step = train_step_case(rng)

    results = {}
    for name in names:
        backend.set_backend(name)
        row = {}
        for label, fn in cases.items():
            fn()  # warm
            row[label] = best_of(fn, args.repeats)
        step()
        row["full_train_step"] = best_of(step, max(2, args.repeats // 2))
        results[name] = row

    width = max(len(k) for k in results[names[0]])
    header = f"{'kernel':<{width}}" + "".join(f"  {n:>12}" for n in names)
    if len(names) == 2:
        header += f"  {'c speedup':>10}"
    print(header)
    for label in results[names[0]]:
        line = f"{label:<{width}}"
        for n in names:
            line += f"  {results[n][label] * 1e3:>10.2f}ms"
        if len(names) == 2:
            line += f"  {results['python'][label] / results['c'][label]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
