"""Compare the numba and pure-NumPy kernel backends on identical work.

The backend is fixed at import time by the ``H2MG_BACKEND`` environment
variable, so each backend runs in its own subprocess and reports timings
as JSON on stdout; the parent collects both and prints a side-by-side
table with speedups.  Workloads cover the two hot loops (simplex
pivoting, ADMM iterations) through their public entry points plus one
end-to-end mixed-integer dispatch plan.

Run from the repository root::

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --repeats 5 --sizes 40,80,160
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

BACKENDS = ("numba", "numpy")


# --------------------------------------------------------------------------
# workload construction (seeded, identical across backends)
# --------------------------------------------------------------------------


def _random_lp(rng: np.random.Generator, n: int):
    """A bounded, feasible LP: min c'x s.t. A x <= b, 0 <= x <= 1."""
    from h2mg.solver import ProgramBuilder

    builder = ProgramBuilder()
    idx = [builder.add_var(f"x{i}", ub=1.0, cost=float(c))
           for i, c in enumerate(rng.normal(size=n))]
    a = rng.uniform(-1.0, 1.0, size=(n // 2, n))
    interior = rng.uniform(0.2, 0.8, size=n)
    slack = rng.uniform(0.1, 1.0, size=n // 2)
    b = a @ interior + slack
    for row, rhs in zip(a, b):
        builder.add_le({idx[i]: float(v) for i, v in enumerate(row)},
                       float(rhs))
    return builder.build()


def _random_qp(rng: np.random.Generator, n: int):
    """A box QP with diagonal curvature and a few coupling rows."""
    from h2mg.solver import ProgramBuilder

    builder = ProgramBuilder()
    idx = [builder.add_var(f"x{i}", lb=-1.0, ub=1.0,
                           cost=float(rng.normal()),
                           quad=float(rng.uniform(0.5, 2.0)))
           for i in range(n)]
    for _ in range(max(2, n // 8)):
        coeffs = rng.uniform(-1.0, 1.0, size=n)
        builder.add_le({idx[i]: float(v) for i, v in enumerate(coeffs)},
                       float(n) * 0.25)
    return builder.build()


def _dispatch_milp():
    """One day of hydrogen-battery dispatch with binary segment choices."""
    from h2mg.grid import HorizonOptions, MicrogridSpec, ScenarioSeries

    spec = MicrogridSpec().with_default_curves()
    hours = 12
    ts = (np.datetime64("2023-01-01T00:00", "s")
          + np.arange(hours) * np.timedelta64(3600, "s"))
    rng = np.random.default_rng(7)
    load = 55.0 + 15.0 * np.sin(np.arange(hours) / 3.0) + rng.uniform(
        0.0, 5.0, hours)
    solar = np.clip(40.0 * np.sin((np.arange(hours) - 3) / 4.0), 0.0, None)
    wind = rng.uniform(5.0, 25.0, hours)
    scen = ScenarioSeries(ts, load, solar, wind, label="bench-day")
    return spec, scen, HorizonOptions()


# --------------------------------------------------------------------------
# worker: runs inside one backend and prints JSON timings
# --------------------------------------------------------------------------


def _time_calls(fn, problems, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for prob in problems:
            fn(prob)
        best = min(best, time.perf_counter() - t0)
    return best


def run_worker(sizes: list[int], repeats: int) -> dict:
    from h2mg._accel import BACKEND
    from h2mg.grid import plan_horizon
    from h2mg.solver import solve_lp, solve_qp

    timings: dict[str, float] = {}
    rng = np.random.default_rng(0)
    lps = {n: [_random_lp(rng, n) for _ in range(8)] for n in sizes}
    qps = {n: [_random_qp(rng, n) for _ in range(8)] for n in sizes}

    # warm-up compiles the kernels so JIT cost is reported separately
    t0 = time.perf_counter()
    solve_lp(lps[sizes[0]][0])
    solve_qp(qps[sizes[0]][0])
    timings["warmup_s"] = time.perf_counter() - t0

    for n in sizes:
        timings[f"simplex_lp_n{n}"] = _time_calls(solve_lp, lps[n], repeats)
        timings[f"admm_qp_n{n}"] = _time_calls(solve_qp, qps[n], repeats)

    spec, scen, opts = _dispatch_milp()
    t0 = time.perf_counter()
    result = plan_horizon(spec, scen, opts)
    timings["dispatch_milp_12h"] = time.perf_counter() - t0
    timings["dispatch_objective"] = float(result.objective)

    return {"backend": BACKEND, "timings": timings}


# --------------------------------------------------------------------------
# parent: one subprocess per backend, then a comparison table
# --------------------------------------------------------------------------


def run_parent(args) -> int:
    reports = {}
    for backend in BACKENDS:
        env = dict(os.environ, H2MG_BACKEND=backend)
        cmd = [sys.executable, os.path.abspath(__file__), "--worker",
               "--sizes", args.sizes, "--repeats", str(args.repeats)]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            print(f"{backend} worker failed:\n{proc.stderr}", file=sys.stderr)
            return 1
        reports[backend] = json.loads(proc.stdout.splitlines()[-1])

    nb = reports["numba"]["timings"]
    np_ = reports["numpy"]["timings"]
    if abs(nb["dispatch_objective"] - np_["dispatch_objective"]) > 1e-9:
        print("backend disagreement on dispatch objective!", file=sys.stderr)
        return 1

    keys = [k for k in nb if k not in ("warmup_s", "dispatch_objective")]
    width = max(len(k) for k in keys)
    print(f"{'workload':<{width}}  {'numba [ms]':>11}  {'numpy [ms]':>11}  "
          f"{'speedup':>8}")
    for key in keys:
        t_nb, t_np = nb[key] * 1e3, np_[key] * 1e3
        print(f"{key:<{width}}  {t_nb:>11.2f}  {t_np:>11.2f}  "
              f"{t_np / t_nb:>7.2f}x")
    print(f"\nnumba warm-up (first compile): {nb['warmup_s']:.2f}s; "
          f"numpy warm-up: {np_['warmup_s'] * 1e3:.2f}ms")
    print(f"identical dispatch objective on both backends: "
          f"{nb['dispatch_objective']:.6f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="30,60,120",
                        help="comma-separated LP/QP variable counts")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repetitions (best-of)")
    parser.add_argument("--worker", action="store_true",
                        help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.worker:
        sizes = [int(s) for s in args.sizes.split(",")]
        print(json.dumps(run_worker(sizes, args.repeats)))
        return 0
    return run_parent(args)


if __name__ == "__main__":
    sys.exit(main())
