"""Time the numba kernels against their numpy fallbacks.

Each path runs in its own interpreter because the kernel selection is
fixed at import time by ``HPMG_DISABLE_NUMBA``. Usage::

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from hpmg import kernels
from hpmg._accel import USE_NUMBA
from hpmg.mesh import mesh_for_problem
from hpmg.multigrid import SmootherSpec
from hpmg.krylov import build_problem_hierarchy, initial_state, mg_solve
from hpmg.operator import stiffness_operator

repeat = int(sys.argv[1])

def best(fn):
    fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

out = {"numba": USE_NUMBA}
mesh = mesh_for_problem("2d-var", 32, 4)
out["assemble 2d-var p4 32x32"] = best(
    lambda: stiffness_operator(mesh, "2d-var").assemble(switch_mode=False))
A = stiffness_operator(mesh, "2d-var").assemble(switch_mode=False).tocsr()
rng = np.random.default_rng(0)
x, b = rng.standard_normal(A.shape[0]), rng.standard_normal(A.shape[0])
skip = np.zeros(A.shape[0], dtype=bool)
out["gauss-seidel sweep (forward)"] = best(lambda: kernels.gs_sweep(A, x.copy(), b, skip))
M = rng.standard_normal((300, 300))
M = M + M.T
out["symmetric eig 300x300"] = best(lambda: kernels.symmetric_eig(M))

def solve():
    h = build_problem_hierarchy("2d-var", "h", SmootherSpec.parse("ssor(2,1)"), 4, 32, 3)
    op = h.finest.operator
    f, u0 = initial_state(op.n_dofs, op.boundary_mask)
    mg_solve(h, f, "pcg", u0)

out["SSOR(2,1)-pCG solve 2d-var p4"] = best(solve)
print(json.dumps(out))
"""


def run(disable, repeat):
    env = dict(os.environ, HPMG_DISABLE_NUMBA="1" if disable else "0")
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    fast, slow = run(False, args.repeat), run(True, args.repeat)
    if not fast.pop("numba"):
        print("warning: numba unavailable, both columns use numpy", file=sys.stderr)
    slow.pop("numba")
    width = max(map(len, fast))
    print(f"{'kernel':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}")
    for key, t in fast.items():
        print(f"{key:<{width}}  {t:10.4f}  {slow[key]:10.4f}  {slow[key] / t:8.1f}")


if __name__ == "__main__":
    main()
