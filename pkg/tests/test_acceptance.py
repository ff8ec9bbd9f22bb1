"""End-to-end acceptance gate.

One test per shipped guarantee; each prints a single verdict line (run with
-s to see them).  All randomness is keyed and frozen, so every margin below
is a rerun of a verified draw rather than a statistical gamble.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from switchmix.certify import (ModelCoefficients, certify_finite,
                               certify_partitioned, is_nonsingular_m_matrix)
from switchmix.chain import (GeneratorMatrix, PoissonField, build_intervals,
                             simulate_chain, two_chain_generator,
                             verify_coupling_function)
from switchmix.cli import main
from switchmix.core import (Segment, StatePoint, constant_segment,
                            point_mass_now, zero_segment)
from switchmix.lab import (EnsembleSpec, builtin_observables,
                           contraction_experiment, coupling_tail_experiment,
                           invariance_check, moment_bound_experiment,
                           remote_start_measure)
from switchmix.rng import derive_key
from switchmix.sim import (AffineCoefficients, Model, OperatorFamily,
                           PieceSchedule, SolverConfig, WienerField,
                           run_schedule, simulate_path)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def verdict(n: int, ok: bool, detail: str) -> None:
    print(f"[criterion {n}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n} failed: {detail}"


def ou_model(sigma: float = 0.8) -> Model:
    shape = (1, 1, 1)
    aff = AffineCoefficients(np.zeros(shape), np.zeros(shape),
                             np.zeros((1, 1)), np.full(shape, sigma),
                             np.zeros(shape), np.zeros(shape))
    return Model(OperatorFamily([[1.0]]), aff, point_mass_now(), 0.5,
                 GeneratorMatrix([[0.0]]))


def certified_two_state() -> Model:
    gen = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
    shape = (2, 1, 1)
    aff = AffineCoefficients(np.full(shape, -0.125), np.full(shape, 0.25),
                             np.array([[0.05], [-0.05]]),
                             np.array([[[0.2]], [[0.3]]]),
                             np.full(shape, 0.5), np.zeros(shape))
    return Model(OperatorFamily(np.ones((2, 1))), aff, point_mass_now(), 0.5,
                 gen)


@pytest.fixture(scope="module")
def remote_report():
    model = certified_two_state()
    solver = SolverConfig(0.01, 0.5, 7101, 7102)
    seg = constant_segment([1.0], 0.5, 0.01, 0.5)
    return model, solver, remote_start_measure(
        model, solver, seg, 0, (-2.0, -4.0, -8.0, -16.0), n_keys=100,
        threads=4)


def test_criterion_1_stationary_second_moment():
    # 10^4 independent paths of the scalar additive-noise benchmark must
    # reproduce the stationary second moment 0.32 within 5% in under 2 min
    t0 = time.monotonic()
    solver = SolverConfig(0.01, 0.0, 7001, 7002)
    spec = EnsembleSpec(10_000, 20.0, 0.5)
    init = StatePoint(zero_segment(1, 0.5, 0.01, 0.0), 0)
    rep = moment_bound_experiment(ou_model(), solver, spec, init, threads=4)
    elapsed = time.monotonic() - t0
    rel = abs(rep.tail_mean - 0.32) / 0.32
    verdict(1, rel <= 0.05 and elapsed < 120.0 and not rep.failed,
            f"second moment {rep.tail_mean:.5f} vs 0.32 "
            f"(rel err {rel:.2%}), {rep.n_paths} paths in {elapsed:.1f}s")


def test_criterion_2_m_matrix_three_way_agreement():
    # 1000 random 5x5 Z-matrices straddling the spectral boundary: the three
    # independent tests must agree with each other and with ground truth
    rng = np.random.default_rng(42)
    checked = 0
    for idx in range(1000):
        b = np.abs(rng.normal(size=(5, 5)))
        spectral = float(np.abs(np.linalg.eigvals(b)).max())
        factor = 1.3 if idx % 2 == 0 else 0.7
        a = factor * spectral * np.eye(5) - b
        rep = is_nonsingular_m_matrix(a, tol=1e-9)
        assert rep.reason != "criteria-disagree", f"disagreement at {idx}"
        assert rep.passed == (factor > 1.0), f"wrong verdict at {idx}"
        checked += 1
    hand = is_nonsingular_m_matrix([[2.0, -1.0], [-1.0, 2.0]])
    np.testing.assert_allclose(hand.solution, [1.0, 1.0], atol=1e-12)
    verdict(2, checked == 1000 and hand.passed,
            "1000 random 5x5 matrices: three tests unanimous and correct; "
            "hand solution (1, 1) recovered")


def test_criterion_3_switching_chain_long_run_law():
    # one T=1000 path of the two-state chain: occupation of state 0 within
    # 2% of 2/3 and the 0->1 jump flux within 5% of rate times occupation
    gen = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
    table = build_intervals(gen)
    field = PoissonField(derive_key(907, 3), table.m_bound)
    path = simulate_chain(table, 0, 0.0, 1000.0, field)
    occ = path.occupation(0, 0.0, 1000.0)
    flux = path.transition_count(0, 1) / 1000.0
    occ_err = abs(occ - 2.0 / 3.0) / (2.0 / 3.0)
    flux_err = abs(flux - 1.0 * occ) / (1.0 * occ)
    verdict(3, occ_err <= 0.02 and flux_err <= 0.05,
            f"occupation {occ:.4f} (err {occ_err:.2%} of 2/3), "
            f"jump flux {flux:.4f} (err {flux_err:.2%} of q01*occ)")


def test_criterion_4_coalescence_and_coupling_tail():
    # 1000 shared-field chain pairs from distinct states: identical jump
    # records after meeting, and a log-linear coupling-time tail
    gen = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
    rep = coupling_tail_experiment(gen, 0, 1, 1000, 15.0, seed=7201,
                                   threads=4)
    verdict(4, rep.exact_fraction == 1.0 and rep.n_uncoupled == 0
            and rep.fit.r_squared >= 0.9,
            f"paths identical after meeting on all {rep.n_pairs} pairs; "
            f"survival fit r2 {rep.fit.r_squared:.3f} "
            f"(rate {rep.theta_hat:.3f})")


def test_criterion_5_difference_generator_drift():
    # the two-chain generator applied to |d| equals -1 exactly at both
    # ordered state pairs, certifying moment exponents on all of (0, 1)
    gen = GeneratorMatrix([[-1.0, 1.0], [2.0, -2.0]])
    table = build_intervals(gen)
    v01 = two_chain_generator(table, lambda d: abs(d), 0, 1)
    v10 = two_chain_generator(table, lambda d: abs(d), 1, 0)
    diag = verify_coupling_function(table, lambda d: abs(d))
    verdict(5, v01 == -1.0 and v10 == -1.0 and diag.passed
            and diag.theta_max == 1.0,
            f"drift at (0,1)={v01!r}, (1,0)={v10!r} (exact); admissible "
            f"exponent range (0, {diag.theta_max!r})")


def test_criterion_6_shared_noise_contraction_rate():
    # the certified contraction rate must under-predict the fitted decay of
    # the mean squared gap between shared-noise twins (1000 pairs)
    model = certified_two_state()
    cert = certify_finite(model.generator, model.coefficients())
    assert cert.passed
    threshold = 0.8 * cert.rates.contraction_rate
    solver = SolverConfig(0.01, 0.5, 7101, 7102)
    spec = EnsembleSpec(1000, 6.0, 0.1)
    sa = constant_segment([1.0], 0.5, 0.01, 0.5)
    sb = constant_segment([-0.5], 0.5, 0.01, 0.5)
    rep = contraction_experiment(model, solver, spec, sa, sb, 0, threads=4)
    verdict(6, rep.fit.rate >= threshold and rep.fit.r_squared >= 0.8
            and not rep.fit.degenerate,
            f"fitted rate {rep.fit.rate:.3f} >= 0.8 x certified "
            f"{cert.rates.contraction_rate:.3f}, r2 {rep.fit.r_squared:.3f}")


def test_criterion_7_remote_start_funnel(remote_report):
    # doubling the start depth must shrink the gap at time zero by at least
    # 10% per level, and restarting from a recorded state must be bit-exact
    model, solver, rep = remote_report
    decreasing = bool(np.all(np.diff(rep.mean_gaps) < 0.0))
    ratios_ok = bool(np.all(rep.ratios <= 0.9))

    ou = ou_model()
    osolver = SolverConfig(0.01, 0.0, 21, 22)
    init = StatePoint(constant_segment([1.0], 0.5, 0.01, 0.0), 0)
    deep = simulate_path(ou, osolver, init, -4.0, 0.0)
    mid = StatePoint(Segment(0.5, 0.01, deep.states[200][None, :]), 0)
    resumed = simulate_path(ou, osolver, mid, -2.0, 0.0)
    bit_exact = bool(np.array_equal(resumed.states, deep.states[200:]))

    verdict(7, decreasing and ratios_ok and rep.monotone and bit_exact,
            f"gap means {np.array2string(rep.mean_gaps, precision=5)} "
            f"strictly decreasing, ratios "
            f"{np.array2string(rep.ratios, precision=3)} <= 0.9; "
            f"restart noise bit-exact")


def test_criterion_8_pushforward_invariance(remote_report):
    # pushing the remote-start sample forward by t=2 with fresh noise must
    # leave every built-in observable mean within 3 jackknife errors
    model, solver, rep = remote_report
    inv = invariance_check(model, solver, rep.measure, 2.0,
                           builtin_observables(), threads=4)
    worst = max((abs(m) / se if se > 0.0 else 0.0)
                for m, se, _ in inv.rows.values())
    verdict(8, inv.passed,
            f"all {len(inv.rows)} observable means invariant under t=2 push "
            f"(worst |z| {worst:.2f} of 3)")


def test_criterion_9_partition_reduction_oracle():
    # four regimes collapse into two bands with hand-checked worst-case
    # generator, balance matrix, weights and zero comparison slack; a
    # non-dissipative variant must be rejected at the sign-pattern gate
    gen = GeneratorMatrix([[-1.5, 0.5, 0.6, 0.4], [0.3, -1.5, 1.0, 0.2],
                           [1.0, 1.0, -2.7, 0.7], [0.8, 0.7, 0.3, -1.8]])
    coeffs = ModelCoefficients([0.5, 0.6, 5.0, 5.5], [0.9, 1.0, 1.3, 1.4],
                               [0.3, 0.3, 0.3, 0.3], 0.1, 0.5,
                               point_mass_now())
    cert, part = certify_partitioned(gen, coeffs, (-math.inf, 1.0, 1.4))
    assert cert.passed
    assert [list(b) for b in part.blocks] == [[0, 1], [2, 3]]
    np.testing.assert_allclose(part.band_generator.q,
                               [[-1.0, 1.0], [2.0, -2.0]], atol=1e-15)
    np.testing.assert_allclose(part.balance_matrix,
                               [[0.9, -0.1], [-2.0, 8.5]], atol=1e-15)
    np.testing.assert_allclose(part.band_weights,
                               [11.5 / 7.45, 2.9 / 7.45], rtol=1e-12)
    assert part.comparison_slack <= 1e-10
    assert cert.delay_load == pytest.approx(4.6 / 7.45, rel=1e-12)

    bad_gen = GeneratorMatrix([[-3.0, 1.0, 2.0], [1.0, -2.0, 1.0],
                               [2.0, 2.0, -4.0]])
    bad = ModelCoefficients([1.0, 1.0, 1.0], [0.1, 0.2, 0.9],
                            [0.1, 0.1, 0.1], 0.1, 0.5, point_mass_now())
    bad_cert, _ = certify_partitioned(bad_gen, bad, (-math.inf, 0.5, 0.9))
    verdict(9, not bad_cert.passed and bad_cert.reason == "pattern",
            f"band generator and balance matrix match hand values, "
            f"comparison slack {part.comparison_slack!r} <= 1e-10, "
            f"K={cert.delay_load:.4f}; negative control rejected "
            f"({bad_cert.reason})")


def _run_cli(cmd, cfg_path, out_dir, threads=None):
    argv = [cmd, "--config", str(cfg_path), "--out", str(out_dir)]
    if threads is not None:
        argv += ["--threads", str(threads)]
    code = main(argv)
    assert code == 0, f"{cmd} exited {code}"
    files = {}
    for p in sorted(Path(out_dir).iterdir()):
        data = p.read_bytes()
        if p.name == "manifest.json":
            doc = json.loads(data)
            doc.pop("wall_clock_s")
            data = json.dumps(doc, sort_keys=True).encode()
        files[p.name] = data
    return files


def test_criterion_10_cli_reproducibility(tmp_path, capsys):
    # every CLI command rerun on its shipped config must write byte-identical
    # outputs, and thread count must not change any byte
    plan = [
        ("certify", CONFIGS / "certified2.json", None),
        ("partition", CONFIGS / "partition4.json", None),
        ("simulate", CONFIGS / "certified2.json", None),
        ("ensemble", CONFIGS / "ou.json", 4),
        ("couple", CONFIGS / "certified2.json", 4),
        ("remote-start", CONFIGS / "certified2.json", 4),
        ("mixing", CONFIGS / "certified2.json", 4),
    ]
    n_files = 0
    for cmd, cfg, threads in plan:
        first = _run_cli(cmd, cfg, tmp_path / f"{cmd}-a")
        again = _run_cli(cmd, cfg, tmp_path / f"{cmd}-b")
        assert first == again, f"{cmd} rerun differs"
        if threads is not None:
            threaded = _run_cli(cmd, cfg, tmp_path / f"{cmd}-t",
                                threads=threads)
            assert first == threaded, f"{cmd} output depends on threads"
        n_files += len(first)
    capsys.readouterr()  # drop the commands' own stdout
    verdict(10, True,
            f"{len(plan)} commands rerun byte-identical "
            f"({n_files} files, thread count irrelevant)")


def test_criterion_11_step_halving_error_order():
    # against a 16x finer reference driven by the same aggregated noise,
    # halving dt must roughly halve the strong error (ratio in [1.5, 2.5])
    shape = (1, 1, 1)
    aff = AffineCoefficients(np.full(shape, -0.3), np.full(shape, 0.2),
                             np.array([[0.1]]), np.full(shape, 0.3),
                             np.zeros(shape), np.zeros(shape))
    model = Model(OperatorFamily([[1.0]]), aff, point_mass_now(), 0.5,
                  GeneratorMatrix([[0.0]]))
    horizon = 2.0
    dt_ref = 0.1 / 16

    def integrate(dt, dw_rows):
        n = dw_rows.shape[0]
        sched = PieceSchedule(np.full(n, dt), np.zeros(n),
                              np.zeros(n, dtype=np.int64), dw_rows,
                              np.ones(n, dtype=np.uint8))
        out, _, bad = run_schedule(model, dt, np.array([[1.0]]), sched)
        assert bad == -1
        return out[-1, 0]

    errs = {0.1: [], 0.05: []}
    for key in range(20):
        field = WienerField(derive_key(9000, key), round(1 / dt_ref), 1,
                            dt_ref)
        fine = np.vstack([field.slot(m) for m in range(int(horizon))])
        ref = integrate(dt_ref, fine)
        for dt in errs:
            group = round(dt / dt_ref)
            agg = fine.reshape(-1, group, 1).sum(axis=1)
            errs[dt].append(abs(integrate(dt, agg) - ref))
    ratio = float(np.mean(errs[0.1]) / np.mean(errs[0.05]))
    verdict(11, 1.5 <= ratio <= 2.5,
            f"strong error ratio dt=0.1 over dt=0.05 is {ratio:.3f} "
            f"(20 shared-noise keys, reference dt/16)")
