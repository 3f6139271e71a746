"""Compare the compiled stepping kernel with the numpy fallback.

    python3 benchmarks/bench_backends.py [--quick]

For each grid size and batch size both backends advance the same batch
with the same noise, and the table reports wall time per step and the
largest coefficient difference between them.
"""
import argparse
import time

import numpy as np

from kdvlab import backend
from kdvlab.integrator import NoiseModel, SolverParams, _BatchState, make_stream, run_batch
from kdvlab.spectral import Grid, field_from_modes


def _run(name, grid, params, f, model, U0, T):
    B = U0.shape[0]
    state = _BatchState.plain(B)
    streams = [make_stream(params.seed, i) for i in range(B)]
    t0 = time.perf_counter()
    U = run_batch(U0, grid, params, f, model, T, state, streams, list(range(B)), lambda s, U: None, name)
    return time.perf_counter() - t0, U


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="fewer steps and sizes")
    args = ap.parse_args(argv)
    sizes = (16, 64) if args.quick else (16, 32, 64, 128)
    batches = (1, 8) if args.quick else (1, 8, 32)
    steps = 200 if args.quick else 1000
    if "compiled" not in backend.BACKENDS:
        print("compiled backend not built; only the numpy fallback is available")
    print(f"{'scheme':<7}{'K':>5}{'B':>5}{'python us/step':>16}{'compiled us/step':>18}{'speedup':>9}{'max diff':>11}")
    for scheme, noisy in (("eem", True), ("etdrk4", False)):
        for K in sizes:
            grid = Grid(K)
            f = field_from_modes(grid, [(1, 0.5)])
            model = NoiseModel.uniform(range(1, 5), 0.1) if noisy else NoiseModel()
            params = SolverParams(dt=1e-4, gamma=0.5, scheme=scheme, sample_every=steps)
            T = steps * params.dt
            for B in batches:
                rng = np.random.default_rng(K + B)
                U0 = (rng.standard_normal((B, K)) + 1j * rng.standard_normal((B, K))) * 0.3 / np.arange(1, K + 1) ** 2
                tp, Up = _run("python", grid, params, f, model, U0, T)
                row = f"{scheme:<7}{K:>5}{B:>5}{1e6 * tp / steps:>16.1f}"
                if "compiled" in backend.BACKENDS:
                    tc, Uc = _run("compiled", grid, params, f, model, U0, T)
                    diff = float(np.max(np.abs(Up - Uc)))
                    row += f"{1e6 * tc / steps:>18.1f}{tp / tc:>9.1f}{diff:>11.1e}"
                print(row)


if __name__ == "__main__":
    main()
