"""Time the integration kernels on a representative switching workload.

Runs the same preassembled schedule through every available backend and
reports steps per second plus the speedup of the compiled kernel over the
pure one.  The workload is a two-regime scalar model with delayed feedback
and switching at rate about one, long enough to amortize setup.
"""

import argparse
import time

import numpy as np

from switchmix import (AffineCoefficients, DelayMeasure, GeneratorMatrix,
                       Model, OperatorFamily, PoissonField, SolverConfig,
                       StatePoint, constant_segment, simulate_chain)
from switchmix._kernel import available_backends, kernel_module
from switchmix.sim import WienerField, _build_schedule, _packed_model, _atom_arrays, _prepare_hist, grid_index


def workload(horizon: float):
    gen = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
    rho = DelayMeasure(((-0.5, 1.0),))
    ops = OperatorFamily([[1.0], [1.0]])
    shape = (2, 1, 1)
    aff = AffineCoefficients(
        np.full(shape, -0.125), np.full(shape, 0.25),
        np.array([[0.05], [-0.05]]),
        np.array([[[0.2]], [[0.3]]]), np.full(shape, 0.5), np.zeros(shape))
    model = Model(ops, aff, rho, 0.5, gen)
    solver = SolverConfig(0.01, 0.5, 4242, 2424)
    init = StatePoint(constant_segment([0.4], 0.5, 0.01, 0.5), 0)

    g0, g1 = 0, grid_index(horizon, solver.dt)
    table = model.interval_table()
    poisson = PoissonField(solver.seed_poisson, table.m_bound)
    chain = simulate_chain(table, init.regime, 0.0, horizon, poisson)
    wiener = WienerField(solver.seed_wiener, solver.n_sub, model.m_w, solver.dt)
    schedule = _build_schedule(chain, wiener, solver, g0, g1, model.m_w)
    hist = _prepare_hist(model, solver, init.segment)
    return model, solver, schedule, hist


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--horizon", type=float, default=200.0,
                        help="integration horizon in time units")
    parser.add_argument("--repeat", type=int, default=5,
                        help="timed repetitions; best is reported")
    args = parser.parse_args()

    model, solver, schedule, hist0 = workload(args.horizon)
    n_steps = schedule.n_grid_steps
    atoms, weights = _atom_arrays(model, solver.dt)
    packed = _packed_model(model)
    out = np.empty((n_steps + 1, hist0.shape[1]))

    print(f"workload: {n_steps} steps, {schedule.dur.size} pieces, "
          f"dt={solver.dt}")
    rates = {}
    for name in available_backends():
        mod = kernel_module(name)
        best = None
        for _ in range(args.repeat):
            hist = hist0.copy()
            t0 = time.perf_counter()
            bad = mod.run_pieces(*packed, atoms, weights, solver.dt, hist,
                                 schedule.dur, schedule.frac, schedule.regime,
                                 schedule.dw, schedule.grid_end, 1, out)
            el = time.perf_counter() - t0
            assert bad == -1
            best = el if best is None else min(best, el)
        rates[name] = n_steps / best
        print(f"{name:>9}: {n_steps / best:12.0f} steps/s "
              f"({best * 1e3:8.2f} ms best of {args.repeat})")
    if "compiled" in rates and "pure" in rates:
        print(f"  speedup: {rates['compiled'] / rates['pure']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
