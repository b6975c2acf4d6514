"""Time the compiled-loop and numpy flavour of every kernel.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The loop flavour is compiled whenever numba is installed; the ``bound``
column shows which flavour the package uses (NIMZERO_DISABLE_NUMBA=1 binds
the numpy one everywhere). Without numba the loops run as plain Python, so
the inputs shrink.
"""
import argparse
import timeit

import numpy as np

from nimzero import _accel, kernels
from nimzero.agent import OracleStubNet, TableEvaluator
from nimzero.game import NimBoard, action_tables, position_index, position_strides


def _cases(small):
    board = (1, 3, 5) if small else (1, 3, 5, 7, 9, 11)
    caps = np.asarray(board, np.int64)
    strides = position_strides(board)
    yield "grundy_dense", board, (caps, strides)
    yield "minimax_dense", board, (caps, strides)

    five = (1, 3, 5, 7, 9)
    priors, values = TableEvaluator(OracleStubNet(), five).full_table()
    heap_of, count_of = action_tables(five)
    pos = position_index(NimBoard.full(five))
    sims = 50 if small else 800
    yield "search_table", f"{five} S={sims}", (
        priors, values, pos, priors[pos].astype(np.float64), np.asarray(five, np.int64),
        position_strides(five), heap_of, count_of, sims, 0.25, 19652.0, 0.0, False)

    rng = np.random.default_rng(0)
    for batch in ((8,) if small else (128, 3840)):
        z = rng.normal(size=(batch, 512)).astype(np.float32)
        c = rng.normal(size=(batch, 128)).astype(np.float32)
        yield "lstm_cell_forward", f"B={batch} H=128", (z, c)
        gates, c_new, tanh_c, _ = kernels.lstm_cell_forward_numpy(z, c)
        dh = rng.normal(size=c.shape).astype(np.float32)
        yield "lstm_cell_backward", f"B={batch} H=128", (dh, dh.copy(), gates, c, tanh_c)

    games = 100 if small else 10000
    u = rng.random((games, int(caps.sum())))
    yield "random_game_lengths", f"{board} x{games}", (caps, u)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    small = not _accel.HAVE_NUMBA
    print(f"backend: {_accel.backend()}")
    print(f"{'kernel':22s} {'input':28s} {'loop ms':>10s} {'numpy ms':>10s} {'speed-up':>9s}  bound")
    for name, label, call_args in _cases(small):
        loop = getattr(kernels, f"{name}_loop")
        vec = getattr(kernels, f"{name}_numpy")
        loop(*call_args)  # compile
        times = []
        for fn in (loop, vec):
            number = 3
            best = min(timeit.repeat(lambda: fn(*call_args), number=number, repeat=args.repeat))
            times.append(best / number * 1e3)
        bound = "loop" if getattr(kernels, name) is loop else "numpy"
        print(f"{name:22s} {str(label):28s} {times[0]:10.3f} {times[1]:10.3f} "
              f"{times[1] / times[0]:8.2f}x  {bound}")


if __name__ == "__main__":
    main()
