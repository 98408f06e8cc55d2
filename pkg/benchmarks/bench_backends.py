"""Compare the numba and pure-numpy backends on the hot kernels.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``RASCHMC_BACKEND``.

    python benchmarks/bench_backends.py --persons 100 --persons 1000
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
import raschmc
from raschmc import kernels
from raschmc.harness import draw_inits
from raschmc.mh import MhConfig, sample_mh
from raschmc.model import ModelSpec, simulate_data
from raschmc.nuts import NutsConfig, sample_nuts

P, reps, iters = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
spec = ModelSpec()
data, _ = simulate_data(20, P, seed=0)
args = spec.kernel_args(data)
q = np.random.default_rng(0).normal(size=spec.dim(20, P)) * 0.5
kernels.logp_grad(q, args)
t = time.perf_counter()
for _ in range(reps):
    kernels.logp_grad(q, args)
grad_us = (time.perf_counter() - t) / reps * 1e6
init = draw_inits(0, 0, spec).param_vector(spec, 20, P)
nuts = sample_nuts(spec, data, init, NutsConfig(iters, iters, seed=0))
mh = sample_mh(spec, data, init, MhConfig(iters, iters, seed=0))
print(json.dumps({
    "backend": raschmc.BACKEND, "P": P, "grad_us": grad_us,
    "nuts_sampling_s": nuts.timing.sampling_seconds, "nuts_total_s": nuts.timing.total_seconds,
    "mh_sampling_s": mh.timing.sampling_seconds, "mh_total_s": mh.timing.total_seconds,
}))
"""


def run(backend, P, reps, iters):
    env = {**os.environ, "RASCHMC_BACKEND": backend}
    out = subprocess.run([sys.executable, "-c", WORKER, str(P), str(reps), str(iters)],
                         env=env, check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--persons", type=int, action="append")
    parser.add_argument("--reps", type=int, default=200, help="gradient evaluations to time")
    parser.add_argument("--iters", type=int, default=100, help="warmup and sampling iterations")
    args = parser.parse_args(argv)
    print(f"{'P':>6} {'kernel':>16} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for P in args.persons or [100, 1000]:
        nb = run("numba", P, args.reps, args.iters)
        npy = run("numpy", P, args.reps, args.iters)
        for key, label in [("grad_us", "gradient (us)"), ("nuts_sampling_s", "NUTS sampling (s)"),
                           ("mh_sampling_s", "MH sampling (s)")]:
            print(f"{P:>6} {label:>16} {nb[key]:10.4g} {npy[key]:10.4g} {npy[key] / nb[key]:8.1f}x")


if __name__ == "__main__":
    main()
