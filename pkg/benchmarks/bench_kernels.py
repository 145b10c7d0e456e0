"""Compiled vs pure-Python kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the Lindblad right-hand side at the default and the raised cutoffs,
the coincidence pair histogram, and one full ``peak_g2`` evaluation under
each backend (the latter in subprocesses, since the backend is fixed at
import).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from phononcorr import _kernels_py
from phononcorr.lindblad import LindbladModel, SimConfig, initial_state

try:
    from phononcorr._ext import kernels as _compiled
except ImportError:
    _compiled = None


def _rhs_case(cutoffs):
    s1, s2, a2, ph = cutoffs
    cfg = SimConfig(write_amplitude=0.1, read_amplitude=0.2, read_center_ps=1.9,
                    cutoff_s1=s1, cutoff_s2=s2, cutoff_as2=a2, cutoff_phonon=ph)
    model = LindbladModel(cfg)
    rho = np.ascontiguousarray(initial_state(cfg).matrix)
    diag, hw, jw = model.coefficients(1.6)
    out = np.empty_like(rho)

    def call(k):
        return lambda: k.lindblad_rhs(rho, diag, model._hsrc, hw, model._jsrc, jw, out)

    return f"lindblad_rhs D={model.layout.dimension}", call


def _pairs_case():
    rng = np.random.default_rng(0)
    starts = np.sort(rng.integers(0, 10**7, 20_000)).astype(float) * 12.5
    stops = np.sort(rng.integers(0, 10**7, 20_000)).astype(float) * 12.5
    counts = np.zeros(2 * 640 + 1, np.int64)

    def call(k):
        return lambda: k.pair_histogram(starts, stops, 0.512, 640, counts)

    return "pair_histogram 2e4 x 2e4", call


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def _end_to_end(pure: bool) -> float:
    code = ("import time; from phononcorr.lindblad import SimConfig, peak_g2;"
            "c = SimConfig(write_amplitude=0.01, read_amplitude=0.1, read_center_ps=1.9);"
            "t = time.perf_counter(); peak_g2(c); print(time.perf_counter() - t)")
    env = dict(os.environ, PHONONCORR_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    if _compiled is None:
        print("compiled extension not built; only the pure-Python timings are shown")
    cases = [_rhs_case((3, 3, 3, 4)), _rhs_case((4, 4, 4, 5)), _pairs_case()]
    print(f"{'kernel':28s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speed-up':>9s}")
    for name, make in cases:
        py = _best(make(_kernels_py), args.repeat, 20) * 1e3
        if _compiled is None:
            print(f"{name:28s} {py:12.3f} {'-':>12s} {'-':>9s}")
            continue
        cy = _best(make(_compiled), args.repeat, 20) * 1e3
        print(f"{name:28s} {py:12.3f} {cy:12.3f} {py / cy:8.1f}x")
    if not args.skip_end_to_end:
        py, cy = _end_to_end(True), _end_to_end(False)
        print(f"{'peak_g2 (one grid point)':28s} {py * 1e3:12.1f} {cy * 1e3:12.1f} {py / cy:8.1f}x")


if __name__ == "__main__":
    main()
