"""Time the filter kernels under numba and under the pure-numpy fallback.

The LSTM kernels are plain numpy on both paths; they are timed as a
reference for the cost of one training step.

Each backend runs in its own interpreter (the backend is fixed at import
time by ``LIFTKIT_DISABLE_NUMBA``), so kernels that call other kernels are
measured entirely on one path. Numba timings exclude compilation.

    python benchmarks/bench_kernels.py [--frames 5000] [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _workloads(frames: int):
    import numpy as np

    from liftkit import _kernels as K

    rng = np.random.default_rng(0)
    acc = rng.normal(0.0, 0.3, (frames, 3))
    acc[:, 2] += 9.81
    gyr = rng.normal(0.0, 0.2, (frames, 3))
    q0 = np.array([1.0, 0.0, 0.0, 0.0])

    B, T, C, H = 32, 10, 36, 128
    X = rng.normal(size=(T, B, C))
    Wx = rng.uniform(-0.07, 0.07, (4 * H, C))
    Wh = rng.uniform(-0.07, 0.07, (4 * H, H))
    b = np.zeros(4 * H)
    dh = rng.normal(size=(B, H))

    def lstm_step():
        hs, cs, gates = K.lstm_forward(X, Wx, Wh, b)
        K.lstm_backward(X, Wx, Wh, hs, cs, gates, dh)

    return {
        f"mahony_run ({frames} frames)": lambda: K.mahony_run(acc, gyr, 0.04, 1.0, 0.3, q0, np.zeros(3), False),
        f"ekf_run ({frames} frames)": lambda: K.ekf_run(acc, gyr, 0.04, 0.09, 0.25, q0, 0.01 * np.eye(4)),
        f"lstm fwd+bwd (B={B}, T={T}, H={H})": lstm_step,
    }


def _measure(frames: int, repeat: int) -> dict:
    from liftkit import BACKEND

    out = {"backend": BACKEND, "seconds": {}}
    for name, fn in _workloads(frames).items():
        fn()  # warm-up (compiles under numba)
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["seconds"][name] = best
    return out


def _run_backend(disable_numba: bool, frames: int, repeat: int) -> dict:
    env = dict(os.environ, LIFTKIT_DISABLE_NUMBA="1" if disable_numba else "0")
    cmd = [sys.executable, __file__, "--worker", "--frames", str(frames), "--repeat", str(repeat)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--frames", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(_measure(args.frames, args.repeat)))
        return

    fast = _run_backend(False, args.frames, args.repeat)
    slow = _run_backend(True, args.frames, args.repeat)
    if fast["backend"] != "numba":
        print("numba is not installed; only the numpy path is available")
    width = max(len(k) for k in slow["seconds"])
    print(f"{'kernel':<{width}}  {'numpy [s]':>10}  {fast['backend'] + ' [s]':>10}  {'speed-up':>8}")
    for name, t_slow in slow["seconds"].items():
        t_fast = fast["seconds"][name]
        print(f"{name:<{width}}  {t_slow:>10.4f}  {t_fast:>10.4f}  {t_slow / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
