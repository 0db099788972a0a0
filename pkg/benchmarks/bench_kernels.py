"""Compare the compiled kernels with the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--iterations 200]

Times the slice-sampling log-variance update, B-spline design assembly and a
short desk-scale Gibbs chain under each backend, and checks that both
backends return the same numbers.
"""
import argparse
import timeit

import numpy as np

from ufpfts import _kernels_py, kernels
from ufpfts.design import ModelSpec
from ufpfts.mcmc import SamplerSettings, run_chain
from ufpfts.splines import make_basis
from ufpfts.synthetic import desk_truth, simulate_dataset

try:
    from ufpfts import _kernels as _compiled
except ImportError:
    _compiled = None


def _slice_case(mod, n_calls=200):
    spec = ModelSpec.build(102, K=7, L=6)
    berr = np.ascontiguousarray(spec.Berr)
    n = np.full(102, 250.0)
    sse = np.linspace(40, 150, 102)
    pr = spec.priors

    def run():
        rng = np.random.default_rng(0)
        eta = np.full(6, pr.eta_mean)
        w = np.zeros(102)
        for _ in range(n_calls):
            mod.slice_logvar(rng, eta, w, berr, n, sse, pr.eta_mean, pr.eta_sd, 0.1,
                             1.0, 0.3, 32)
        return eta
    return run


def _bspline_case(mod):
    b = make_basis(3, (1, 102), 3)
    x = np.random.default_rng(1).uniform(1, 102, 100_000)
    return lambda: mod.bspline_design(b.knots, 3, x)


def _chain_case(mod, iterations):
    truth = desk_truth(seed=0)
    ds, _ = simulate_dataset(truth)
    settings = SamplerSettings(iterations=iterations, burn_in=0, seed=1)

    def run():
        saved = kernels.slice_logvar
        kernels.slice_logvar = mod.slice_logvar
        try:
            return run_chain(truth.spec, ds, settings).theta
        finally:
            kernels.slice_logvar = saved
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--iterations", type=int, default=200, help="Gibbs iterations per chain")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    cases = [
        ("slice_logvar x200 (S=102, L=6)", lambda m: _slice_case(m)),
        ("bspline_design (1e5 points)", _bspline_case),
        (f"desk chain, {args.iterations} iterations", lambda m: _chain_case(m, args.iterations)),
    ]
    print(f"{'case':<36}{'python s':>12}{'compiled s':>12}{'speedup':>10}  same")
    for name, make in cases:
        f_py, f_c = make(_kernels_py), make(_compiled)
        same = np.allclose(f_py(), f_c(), rtol=0, atol=1e-8)
        number = 1
        t_py = min(timeit.repeat(f_py, number=number, repeat=args.repeat))
        t_c = min(timeit.repeat(f_c, number=number, repeat=args.repeat))
        print(f"{name:<36}{t_py:>12.4f}{t_c:>12.4f}{t_py / t_c:>9.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
