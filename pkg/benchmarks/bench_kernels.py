"""Time each kernel and one full training step on every available backend.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import random
import time

import numpy as np

from agdst import kernels
from agdst.corpus import corpus_text, default_synthetic_spec, generate_synthetic, ontology_text, split
from agdst.two_pass import RunConfig, Tracker, Trainer, turn_examples
from agdst.vocab import build_vocab


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(k, rng):
    # shapes of the default model on a 16-turn, two-pass batch
    x = rng.standard_normal((32 * 180, 64)).astype(np.float32)
    g, b = np.ones(64, np.float32), np.zeros(64, np.float32)
    y, xhat, rstd = k.layer_norm_fwd(x, g, b, 1e-5)
    scores = rng.standard_normal((32 * 4, 180, 180)).astype(np.float32)
    probs = k.causal_softmax_fwd(scores)
    u = rng.standard_normal((32, 180, 256)).astype(np.float32)
    logits = rng.standard_normal((32 * 180, 190)).astype(np.float32)
    targets = rng.integers(0, 190, 32 * 180).astype(np.int64)
    weights = np.full(32 * 180, 1 / 5760, np.float32)
    out = np.zeros((190, 64), np.float32)
    idx = rng.integers(0, 190, 32 * 180).astype(np.int64)
    src = rng.standard_normal((32 * 180, 64)).astype(np.float32)
    a, bb = "cambridge lodge lodge" * 3, "cambridge lodge" * 3
    return {
        "layer_norm_fwd": lambda: k.layer_norm_fwd(x, g, b, 1e-5),
        "layer_norm_bwd": lambda: k.layer_norm_bwd(x, xhat, rstd, g),
        "causal_softmax_fwd": lambda: k.causal_softmax_fwd(scores),
        "causal_softmax_bwd": lambda: k.causal_softmax_bwd(scores, probs),
        "gelu_fwd": lambda: k.gelu_fwd(u),
        "gelu_bwd": lambda: k.gelu_bwd(u, u),
        "xent_fwd_bwd": lambda: k.xent_fwd_bwd(logits, targets, weights),
        "scatter_add_rows": lambda: k.scatter_add_rows(out, idx, src),
        "edit_distance": lambda: k.edit_distance(a, bb),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    results = {}
    for name in backends:
        k = kernels.get_backend(name)
        for case, fn in kernel_cases(k, np.random.default_rng(0)).items():
            results.setdefault(case, {})[name] = _best(fn, args.repeat)

    records = generate_synthetic(default_synthetic_spec())
    schema = records[0].schema
    tr, _, _ = split(records, seed=0)
    vocab = build_vocab(corpus_text(tr), schema, extra=ontology_text(schema))
    examples = turn_examples(tr)
    batch = random.Random(0).sample(examples, 16)
    prev = kernels.BACKEND
    for name in backends:
        kernels.set_backend(name)
        trainer = Trainer(Tracker(schema, vocab, RunConfig()), examples)
        results.setdefault("train_step (16 turns)", {})[name] = _best(lambda: trainer.step(batch), max(3, args.repeat // 4))
    kernels.set_backend(prev)

    print(f"{'case':<24}" + "".join(f"{b:>14}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    for case, row in results.items():
        line = f"{case:<24}" + "".join(f"{row[b] * 1e3:>12.3f}ms" for b in backends)
        if len(backends) > 1:
            line += f"   {row['python'] / row['compiled']:>6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
