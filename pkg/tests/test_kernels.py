import math
import os
import subprocess
import sys

import numpy as np
import pytest

from switchmix._kernel import BACKEND, available_backends, kernel_module
from switchmix.chain import GeneratorMatrix
from switchmix.core import DelayMeasure, StatePoint, constant_segment
from switchmix.sim import (AffineCoefficients, Model, OperatorFamily,
                           PieceSchedule, SolverConfig, WienerField,
                           run_schedule, simulate_path)
from switchmix.sim import _atom_arrays, _packed_model

HAS_COMPILED = "compiled" in available_backends()


def delayed_model():
    q = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
    shape = (2, 2, 2)
    rng = np.random.default_rng(7)
    g = rng.normal(scale=0.2, size=shape)
    g = (g + np.swapaxes(g, 1, 2)) / 2
    aff = AffineCoefficients(
        g, rng.normal(scale=0.2, size=shape),
        rng.normal(scale=0.1, size=(2, 2)),
        rng.normal(scale=0.3, size=(2, 2, 3)),
        rng.normal(scale=0.2, size=(2, 2, 3)),
        rng.normal(scale=0.2, size=(2, 2, 3)))
    ops = OperatorFamily([[1.0, 2.5], [0.5, 3.0]])
    rho = DelayMeasure(((0.0, 0.3), (-0.5, 0.7)))
    return Model(ops, aff, rho, 0.5, q)


def synthetic_pieces(n_cells, dt, m_w, seed):
    """Cells alternating between one whole-cell piece and a three-way split."""
    rng = np.random.default_rng(seed)
    dur, frac, reg, dw, end = [], [], [], [], []
    for c in range(n_cells):
        if c % 2 == 0:
            dur.append(dt)
            frac.append(0.0)
            reg.append(c % 2)
            dw.append(rng.normal(scale=math.sqrt(dt), size=m_w))
            end.append(1)
        else:
            cuts = (0.3 * dt, 0.5 * dt, 0.2 * dt)
            offs = (0.0, 0.3, 0.8)
            for k in range(3):
                dur.append(cuts[k])
                frac.append(offs[k])
                reg.append((c + k) % 2)
                dw.append(rng.normal(scale=math.sqrt(cuts[k]), size=m_w))
                end.append(1 if k == 2 else 0)
    return PieceSchedule(np.array(dur), np.array(frac),
                         np.array(reg, dtype=np.int64), np.array(dw),
                         np.array(end, dtype=np.uint8))


def call_backend(name, model, dt, hist, sched, stride=1):
    mod = kernel_module(name)
    out = np.empty((sched.n_grid_steps // stride + 1, hist.shape[1]))
    hist = hist.copy()
    atoms, weights = _atom_arrays(model, dt)
    bad = mod.run_pieces(*_packed_model(model), atoms, weights, dt, hist,
                         sched.dur, sched.frac, sched.regime,
                         np.ascontiguousarray(sched.dw), sched.grid_end,
                         stride, out)
    return out, hist, int(bad)


class TestSelection:
    def test_pure_always_available(self):
        assert "pure" in available_backends()
        assert BACKEND in available_backends()

    def test_unknown_name_rejected(self):
        with pytest.raises(ValueError):
            kernel_module("gpu")


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled kernel not built")
class TestBackendAgreement:
    def test_split_schedule(self):
        model = delayed_model()
        dt = 0.05
        sched = synthetic_pieces(40, dt, 3, seed=3)
        hist0 = np.random.default_rng(5).normal(size=(11, 2))
        out_c, hist_c, bad_c = call_backend("compiled", model, dt, hist0, sched)
        out_p, hist_p, bad_p = call_backend("pure", model, dt, hist0, sched)
        assert bad_c == bad_p == -1
        np.testing.assert_allclose(out_c, out_p, rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(hist_c, hist_p, rtol=1e-10, atol=1e-14)

    def test_record_stride_agreement(self):
        model = delayed_model()
        dt = 0.05
        sched = synthetic_pieces(40, dt, 3, seed=9)
        hist0 = np.zeros((11, 2))
        hist0[:, 0] = 0.3
        dense, _, _ = call_backend("pure", model, dt, hist0, sched, stride=1)
        sparse, _, _ = call_backend("pure", model, dt, hist0, sched, stride=4)
        np.testing.assert_array_equal(sparse, dense[::4])

    def test_divergence_index_matches(self):
        shape = (1, 1, 1)
        aff = AffineCoefficients(np.full(shape, 400.0), np.zeros(shape),
                                 np.zeros((1, 1)), np.zeros(shape),
                                 np.zeros(shape), np.zeros(shape))
        model = Model(OperatorFamily([[1.0]]), aff,
                      DelayMeasure(((0.0, 1.0),)), 0.5,
                      GeneratorMatrix([[0.0]]))
        n = 600
        sched = PieceSchedule(np.full(n, 0.01), np.zeros(n),
                              np.zeros(n, dtype=np.int64), np.zeros((n, 1)),
                              np.ones(n, dtype=np.uint8))
        hist = np.ones((1, 1))
        bad = [call_backend(name, model, 0.01, hist, sched)[2]
               for name in ("compiled", "pure")]
        assert bad[0] == bad[1] >= 0


class TestEnvOverride:
    def _run_forced(self, backend, tmp_path):
        out = tmp_path / f"{backend}.npy"
        code = (
            "import numpy as np\n"
            "from switchmix.chain import GeneratorMatrix\n"
            "from switchmix.core import constant_segment, StatePoint\n"
            "from switchmix.sim import (AffineCoefficients, Model,\n"
            "    OperatorFamily, SolverConfig, simulate_path)\n"
            "from switchmix.core import point_mass_now\n"
            "import switchmix\n"
            f"assert switchmix.kernel_backend == {backend!r}\n"
            "shape = (2, 1, 1)\n"
            "aff = AffineCoefficients(np.full(shape, -0.125),\n"
            "    np.full(shape, 0.25), np.array([[0.05], [-0.05]]),\n"
            "    np.array([[[0.2]], [[0.3]]]), np.full(shape, 0.5),\n"
            "    np.zeros(shape))\n"
            "model = Model(OperatorFamily(np.ones((2, 1))), aff,\n"
            "    point_mass_now(), 0.5, GeneratorMatrix([[-1., 1.], [2., -2.]]))\n"
            "solver = SolverConfig(0.01, 0.5, 61, 62)\n"
            "init = StatePoint(constant_segment([0.4], 0.5, 0.01, 0.5), 0)\n"
            "traj = simulate_path(model, solver, init, 0.0, 8.0)\n"
            f"np.save({str(out)!r}, traj.states)\n")
        env = dict(os.environ, SWITCHMIX_KERNEL=backend)
        subprocess.run([sys.executable, "-c", code], check=True, env=env)
        return np.load(out)

    def test_forced_backends_agree(self, tmp_path):
        if not HAS_COMPILED:
            pytest.skip("compiled kernel not built")
        a = self._run_forced("compiled", tmp_path)
        b = self._run_forced("pure", tmp_path)
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)

    def test_forcing_bogus_backend_fails_import(self):
        env = dict(os.environ, SWITCHMIX_KERNEL="nope")
        proc = subprocess.run([sys.executable, "-c", "import switchmix"],
                              env=env, capture_output=True)
        assert proc.returncode != 0

    def test_per_backend_rerun_stability(self):
        # the selected backend must be bit stable run to run in process
        model = delayed_model()
        dt = 0.05
        sched = synthetic_pieces(20, dt, 3, seed=13)
        hist0 = np.random.default_rng(15).normal(size=(11, 2))
        a = call_backend(BACKEND, model, dt, hist0, sched)[0]
        b = call_backend(BACKEND, model, dt, hist0, sched)[0]
        np.testing.assert_array_equal(a, b)
