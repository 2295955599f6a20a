"""Compare the compiled kernels with the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Times each kernel on representative inputs, then two end-to-end workloads
(50 saturation steps on a 100^2 mesh, 50 training epochs at N = 64) with the
backend swapped in, and prints one row per case.
"""
from __future__ import annotations

import argparse
import timeit
from contextlib import contextmanager

import numpy as np

from co2seq import _kernels_py, kernels

try:
    from co2seq import _kernels as _compiled
except ImportError:
    _compiled = None

NAMES = ("banded_ldl_factor", "banded_ldl_solve", "basis_funs_ders", "stencil_apply",
         "stencil_adjoint")


@contextmanager
def use(impl):
    saved = {n: getattr(kernels, n) for n in NAMES}
    try:
        for n in NAMES:
            setattr(kernels, n, getattr(impl, n))
        yield
    finally:
        for n, f in saved.items():
            setattr(kernels, n, f)


def kernel_cases():
    from co2seq.spline import build_space, mass_matrix_1d
    rng = np.random.default_rng(0)
    space = build_space(100, 2)
    knots = np.ascontiguousarray(space.knots)
    xs = rng.random(30_000)
    lower = np.ascontiguousarray(mass_matrix_1d(space).lower())
    rhs = rng.normal(size=(space.n_basis, space.n_basis))
    u = rng.normal(size=(101, 101))
    a = rng.uniform(0.5, 2.0, (101, 101))
    w = rng.normal(size=(99, 99))

    def factor(k):
        return k.banded_ldl_factor(lower, 1e-14)

    fac, _ = _kernels_py.banded_ldl_factor(lower, 1e-14)
    return {
        "basis_funs_ders (30k points, p=2)": lambda k: k.basis_funs_ders(knots, 2, xs),
        "banded_ldl_factor (n=102, bw=2)": factor,
        "banded_ldl_solve (102 rhs)": lambda k: k.banded_ldl_solve(fac, rhs),
        "stencil_apply (N=100)": lambda k: k.stencil_apply(u, a),
        "stencil_adjoint (N=100)": lambda k: k.stencil_adjoint(w, a),
    }


def saturation_workload():
    from co2seq.config import preset
    from co2seq.driver import run_direct
    run_direct(preset("uniform", steps=50, snapshot_every=1000, sample_n=11))


def training_workload():
    from co2seq import crvpinn
    from co2seq.config import preset
    cfg = preset("uniform", collocation_n=64)
    grid = crvpinn.CollocationGrid(64)
    prob = crvpinn.pressure_problem(np.zeros((65, 65)), cfg.build_reservoir(), grid)
    mlp = crvpinn.init_mlp(cfg.widths, 0)
    crvpinn.train(mlp, crvpinn.AdamState.for_params(mlp), prob, 50, 1e-4)


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    print(f"{'case':44s} {'compiled':>11s} {'python':>11s} {'speedup':>8s}")
    rows = [(name, lambda k=None, f=f: f(k)) for name, f in kernel_cases().items()]
    for name, fn in rows:
        tc = best(lambda: fn(_compiled), args.repeat)
        tp = best(lambda: fn(_kernels_py), args.repeat)
        print(f"{name:44s} {tc * 1e3:9.3f}ms {tp * 1e3:9.3f}ms {tp / tc:7.1f}x")
    for name, work in [("run_direct, 50 steps, 100^2 mesh", saturation_workload),
                       ("train, 50 epochs, N=64", training_workload)]:
        times = {}
        for label, impl in (("compiled", _compiled), ("python", _kernels_py)):
            with use(impl):
                times[label] = best(work, max(1, args.repeat // 2))
        print(f"{name:44s} {times['compiled']:10.3f}s {times['python']:10.3f}s "
              f"{times['python'] / times['compiled']:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
