"""Time the LSTM recurrence kernels: compiled extension vs numpy fallback.

    python benchmarks/bench_lstm.py [--repeat 5] [--dtype float32]

Each row times one forward and one backward pass over ``[T, B, 4H]``
projections with ragged masks, and reports the maximum absolute difference
between the two backends' outputs.
"""
import argparse
import timeit

import numpy as np

from cnesue.tensor.lstm import available_backends, kernels

SHAPES = [
    # (T, B, H): the desk-scale runs used in the tests, then full-size
    # title and content batches, then a wide hidden state
    (12, 200, 16),
    (32, 200, 16),
    (30, 320, 128),
    (100, 320, 128),
    (30, 64, 256),
]


def make_inputs(T, B, H, dtype, rng):
    xw = rng.normal(scale=0.5, size=(T, B, 4 * H)).astype(dtype)
    w_hh = rng.normal(scale=1 / np.sqrt(H), size=(4 * H, H)).astype(dtype)
    lengths = rng.integers(1, T + 1, B)
    mask = (np.arange(T)[:, None] < lengths[None, :]).astype(np.uint8)
    dh = rng.normal(size=(T, B, H)).astype(dtype)
    dc = rng.normal(size=(B, H)).astype(dtype)
    return xw, w_hh, mask, dh, dc


def bench(name, inputs, repeat):
    k = kernels(name)
    xw, w_hh, mask, dh, dc = inputs
    fwd = lambda: k.lstm_forward(xw, w_hh, mask, False)
    hs, cs, gates = (np.asarray(a) for a in fwd())
    bwd = lambda: k.lstm_backward(dh, dc, w_hh, mask, hs, cs, gates, False)
    t_f = min(timeit.repeat(fwd, number=1, repeat=repeat))
    t_b = min(timeit.repeat(bwd, number=1, repeat=repeat))
    grads = tuple(np.asarray(a) for a in bwd())
    return t_f, t_b, (hs, *grads)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    args = ap.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python fallback only")
    rng = np.random.default_rng(0)
    print(f"{'T':>4} {'B':>4} {'H':>4}  {'backend':<9} {'fwd ms':>8} {'bwd ms':>8} {'speedup':>8}  max|diff|")
    for T, B, H in SHAPES:
        inputs = make_inputs(T, B, H, args.dtype, rng)
        results = {b: bench(b, inputs, args.repeat) for b in backends}
        base = results["python"]
        for b, (t_f, t_b, outs) in results.items():
            speedup = (base[0] + base[1]) / (t_f + t_b)
            diff = max(float(np.abs(o - p).max()) for o, p in zip(outs, base[2]))
            print(f"{T:>4} {B:>4} {H:>4}  {b:<9} {t_f * 1e3:8.2f} {t_b * 1e3:8.2f} {speedup:7.2f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
