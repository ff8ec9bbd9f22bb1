"""Ensemble experiments: moment plateaus, shared-noise contraction, chain
coupling tails, remote starts and invariance of the limiting law.

Every experiment derives one key per path index, so results are reproducible
bit for bit at any thread count: threads only change who computes an index,
never what it evaluates to, and reductions run in index order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chain import GeneratorMatrix, PoissonField, build_intervals, simulate_chain, verify_coupling_function
from .core import Segment, StatePoint, ValidationError, state_distance
from .rng import COUPLE_STREAM, PUSH_STREAM, derive_key
from .sim import (Model, SimulationDiverged, SolverConfig, Trajectory,
                  derived_solver, grid_index, remote_start_solve, simulate_path,
                  simulate_pair_shared_noise)

__all__ = [
    "EnsembleSpec",
    "DecayFit",
    "fit_exponential_decay",
    "Observable",
    "builtin_observables",
    "EmpiricalMeasure",
    "MomentReport",
    "moment_bound_experiment",
    "ContractionReport",
    "contraction_experiment",
    "CouplingReport",
    "coupling_tail_experiment",
    "RemoteStartReport",
    "remote_start_measure",
    "MixingReport",
    "mixing_experiment",
    "InvarianceReport",
    "invariance_check",
]

# stream tags separating per-experiment key families
_MOMENT = 11
_CONTRACT = 12
_REMOTE = 13
_MIXING = 14


@dataclass(frozen=True)
class EnsembleSpec:
    '''Path count, horizon and recording grid shared by ensemble runs.'''

    n_paths: int
    horizon: float
    record_dt: float
    burn_in: float = 0.1

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("need at least one path")
        if not (self.horizon > 0.0):
            raise ValidationError("horizon must be positive")
        if not (0.0 < self.record_dt <= self.horizon):
            raise ValidationError("record_dt must lie in (0, horizon]")
        if not (0.0 <= self.burn_in < 1.0):
            raise ValidationError("burn_in must lie in [0, 1)")

    def record_stride(self, dt: float) -> int:
        k = round(self.record_dt / dt)
        if k < 1 or abs(k * dt - self.record_dt) > 1e-9:
            raise ValidationError("record_dt must be a multiple of dt")
        return k


def _map_indexed(fn, n: int, threads: int) -> list:
    '''fn over range(n), results in index order; threads change speed only.'''
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


@dataclass(frozen=True)
class DecayFit:
    '''Least-squares exponential fit of a positive series.'''

    rate: float
    log_intercept: float
    r_squared: float
    n_points: int
    degenerate: bool

    def to_dict(self) -> dict:
        return {"rate": self.rate, "log_intercept": self.log_intercept,
                "r_squared": self.r_squared, "n_points": self.n_points,
                "degenerate": self.degenerate}


def fit_exponential_decay(times, values, burn_in_frac: float = 0.1,
                          floor: float = 1e-300, min_value: float | None = None
                          ) -> DecayFit:
    """Fit values ~ exp(a - rate t) by least squares on the log scale.

    The first burn_in_frac of the samples is dropped, as are values at or
    below floor (and below min_value when given, to cut Monte Carlo noise
    floors).  Fewer than three surviving points, or no time spread, yields a
    degenerate fit with NaN rate.
    """
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.shape != v.shape or t.ndim != 1:
        raise ValidationError("times and values must be equal-length vectors")
    start = int(burn_in_frac * t.size)
    t, v = t[start:], v[start:]
    keep = np.isfinite(v) & (v > floor)
    if min_value is not None:
        keep &= v >= min_value
    t, v = t[keep], v[keep]
    n = int(t.size)
    if n < 3 or np.ptp(t) == 0.0:
        return DecayFit(math.nan, math.nan, 0.0, n, True)
    logs = np.log(v)
    slope, intercept = np.polyfit(t, logs, 1)
    resid = logs - (slope * t + intercept)
    ss_res = float(resid @ resid)
    centered = logs - logs.mean()
    ss_tot = float(centered @ centered)
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return DecayFit(float(-slope), float(intercept), r2, n, False)


@dataclass(frozen=True)
class Observable:
    '''Named functional of a state point with a certified Lipschitz constant
    in the product metric (weighted segment norm plus regime mismatch).'''

    name: str
    fn: object
    lip: float

    def __post_init__(self):
        if not (math.isfinite(self.lip) and self.lip > 0.0):
            raise ValidationError("Lipschitz constant must be finite and positive")

    def __call__(self, point: StatePoint) -> float:
        return float(self.fn(point))


def builtin_observables() -> tuple[Observable, ...]:
    '''Three bounded 1-Lipschitz functionals: clipped weighted segment norm,
    indicator of regime 0, clipped leading coefficient.'''
    return (
        Observable("seg_norm_clip", lambda p: min(p.segment.norm_r(), 1.0), 1.0),
        Observable("regime_zero", lambda p: 1.0 if p.regime == 0 else 0.0, 1.0),
        Observable("head_clip",
                   lambda p: float(np.clip(p.segment.head()[0], -1.0, 1.0)), 1.0),
    )


class EmpiricalMeasure:
    '''Equally weighted sample of state points, with jackknife errors for
    expectations of observables.'''

    __slots__ = ("samples",)

    def __init__(self, samples):
        samples = tuple(samples)
        if not samples:
            raise ValidationError("empirical measure needs at least one sample")
        self.samples = samples

    def __len__(self) -> int:
        return len(self.samples)

    def evaluate(self, obs) -> np.ndarray:
        return np.array([float(obs(p)) for p in self.samples])

    def expectation(self, obs) -> float:
        return float(self.evaluate(obs).mean())

    def jackknife_se(self, obs) -> float:
        vals = self.evaluate(obs)
        n = vals.size
        if n < 2:
            return 0.0
        total = vals.sum()
        loo = (total - vals) / (n - 1)
        return float(math.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))


@dataclass(frozen=True)
class MomentReport:
    '''Ensemble second-moment trace and its stationary plateau.'''

    times: np.ndarray
    mean_norm_sq: np.ndarray
    tail_mean: float
    tail_se: float
    c1_hat: float
    seg_tail_mean: float
    init_norm_sq: float
    n_paths: int
    n_divergent: int
    failed: bool

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(),
                "mean_norm_sq": self.mean_norm_sq.tolist(),
                "tail_mean": self.tail_mean, "tail_se": self.tail_se,
                "c1_hat": self.c1_hat, "seg_tail_mean": self.seg_tail_mean,
                "init_norm_sq": self.init_norm_sq, "n_paths": self.n_paths,
                "n_divergent": self.n_divergent, "failed": self.failed}


def moment_bound_experiment(model: Model, solver: SolverConfig,
                            spec: EnsembleSpec, init: StatePoint,
                            threads: int = 1) -> MomentReport:
    """Estimate E|X(t)|^2 on the record grid over an ensemble of paths with
    independent keyed noise, plus the plateau of the weighted segment norm.

    c1_hat is the tail plateau normalised by (1 + |initial segment|_r^2); a
    path that diverges is dropped, and the experiment fails if more than one
    percent do.
    """
    stride = spec.record_stride(solver.dt)
    n_steps = grid_index(spec.horizon, solver.dt)
    if n_steps % stride:
        raise ValidationError("record_dt must divide the horizon")
    n_rec = n_steps // stride + 1
    tail_from = (3 * n_rec) // 4

    def one(p: int):
        sp = derived_solver(solver, _MOMENT, p)
        try:
            traj = simulate_path(model, sp, init, 0.0, spec.horizon, stride)
        except SimulationDiverged:
            return None
        sq = np.einsum("ij,ij->i", traj.states, traj.states)
        return sq, float(traj.final.segment.norm_r()) ** 2

    results = _map_indexed(one, spec.n_paths, threads)
    total = np.zeros(n_rec)
    tails, segs = [], []
    n_div = 0
    for res in results:
        if res is None:
            n_div += 1
            continue
        sq, seg_sq = res
        total += sq
        tails.append(float(sq[tail_from:].mean()))
        segs.append(seg_sq)
    n_ok = spec.n_paths - n_div
    if n_ok == 0:
        raise SimulationDiverged(0.0)
    mean_sq = total / n_ok
    tails = np.array(tails)
    tail_mean = float(tails.mean())
    tail_se = float(tails.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else 0.0
    init_sq = float(init.segment.norm_r()) ** 2
    times = np.arange(n_rec) * stride * solver.dt
    return MomentReport(times, mean_sq, tail_mean, tail_se,
                        tail_mean / (1.0 + init_sq),
                        float(np.mean(segs)), init_sq, spec.n_paths, n_div,
                        n_div > 0.01 * spec.n_paths)


@dataclass(frozen=True)
class ContractionReport:
    '''Mean squared gap between shared-noise twins, head and segment scale.'''

    times: np.ndarray
    mean_diff_sq: np.ndarray
    mean_seg_diff_sq: np.ndarray
    fit: DecayFit
    fit_head: DecayFit
    exact_zero: bool
    n_pairs: int

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(),
                "mean_diff_sq": self.mean_diff_sq.tolist(),
                "mean_seg_diff_sq": self.mean_seg_diff_sq.tolist(),
                "fit": self.fit.to_dict(), "fit_head": self.fit_head.to_dict(),
                "exact_zero": self.exact_zero, "n_pairs": self.n_pairs}


def contraction_experiment(model: Model, solver: SolverConfig,
                           spec: EnsembleSpec, seg_a: Segment, seg_b: Segment,
                           regime: int, threads: int = 1) -> ContractionReport:
    """Drive twin solutions from seg_a and seg_b under identical chain and
    noise per pair and fit the decay of the mean squared segment gap.

    Identical initial segments cancel exactly (same schedule, same kernel),
    which the exact_zero flag records; the fit is then degenerate.
    """
    stride = spec.record_stride(solver.dt)
    n_steps = grid_index(spec.horizon, solver.dt)
    if n_steps % stride:
        raise ValidationError("record_dt must divide the horizon")
    sel = np.arange(0, n_steps + 1, stride)

    def one(p: int):
        sp = derived_solver(solver, _CONTRACT, p)
        pair = simulate_pair_shared_noise(model, sp, seg_a, seg_b, regime,
                                          0.0, spec.horizon)
        return pair.diff_norm_sq[sel], pair.diff_segment_norm_sq[sel]

    results = _map_indexed(one, spec.n_paths, threads)
    head = np.zeros(sel.size)
    seg = np.zeros(sel.size)
    for h, s in results:
        head += h
        seg += s
    head /= spec.n_paths
    seg /= spec.n_paths
    times = sel * solver.dt
    exact = bool(np.all(seg == 0.0))
    fit_seg = fit_exponential_decay(times, seg, spec.burn_in)
    fit_head = fit_exponential_decay(times, head, spec.burn_in)
    return ContractionReport(times, head, seg, fit_seg, fit_head, exact,
                             spec.n_paths)


def _meeting_time(path_a, path_b, t_from: float) -> float | None:
    '''First time >= t_from at which two step paths agree, or None.'''
    if path_a.state_at(t_from) == path_b.state_at(t_from):
        return float(t_from)
    cand = np.concatenate([path_a.jump_times, path_b.jump_times])
    cand = np.unique(cand[cand > t_from])
    for t in cand:
        if path_a.state_at(t) == path_b.state_at(t):
            return float(t)
    return None


@dataclass(frozen=True)
class CouplingReport:
    '''Coupling-time tail of two shared-field chains from distinct states.'''

    grid: np.ndarray
    survival: np.ndarray
    fit: DecayFit
    theta_hat: float
    taus: np.ndarray
    n_pairs: int
    n_uncoupled: int
    exact_fraction: float
    diagnostics: object

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "survival": self.survival.tolist(),
                "fit": self.fit.to_dict(), "theta_hat": self.theta_hat,
                "n_pairs": self.n_pairs, "n_uncoupled": self.n_uncoupled,
                "exact_fraction": self.exact_fraction,
                "diagnostics": (self.diagnostics.to_dict()
                                if self.diagnostics is not None else None)}


def coupling_tail_experiment(gen: GeneratorMatrix, i: int, j: int,
                             n_pairs: int, t_max: float, seed: int,
                             grid_dt: float = 0.25, coupling_fn=None,
                             threads: int = 1) -> CouplingReport:
    """Couple chains from states i and j on a shared mark field per pair and
    estimate the exponential tail rate of the coupling time.

    Requires an irreducible generator.  The survival curve is fitted where it
    stays above 1/100; exact_fraction is the share of coupled pairs whose
    jump records agree exactly after the meeting time, which the shared
    representation makes 1 by construction.
    """
    if not gen.is_irreducible():
        raise ValidationError("coupling requires an irreducible generator")
    if i == j:
        raise ValidationError("coupling needs distinct initial states")
    table = build_intervals(gen)

    def one(p: int):
        field = PoissonField(derive_key(seed, COUPLE_STREAM, p), table.m_bound)
        pa = simulate_chain(table, i, 0.0, t_max, field)
        pb = simulate_chain(table, j, 0.0, t_max, field)
        tau = _meeting_time(pa, pb, 0.0)
        if tau is None:
            return math.inf, True
        ja = pa.jump_times[pa.jump_times > tau]
        jb = pb.jump_times[pb.jump_times > tau]
        sa = pa.jump_states[pa.jump_times > tau]
        sb = pb.jump_states[pb.jump_times > tau]
        exact = ja.shape == jb.shape and np.array_equal(ja, jb) \
            and np.array_equal(sa, sb)
        return tau, bool(exact)

    results = _map_indexed(one, n_pairs, threads)
    taus = np.array([r[0] for r in results])
    coupled = taus[np.isfinite(taus)]
    exact_frac = (float(np.mean([r[1] for r in results if math.isfinite(r[0])]))
                  if coupled.size else 1.0)
    grid = np.arange(0.0, t_max + grid_dt / 2, grid_dt)
    survival = np.array([(taus > t).mean() for t in grid])
    keep = survival >= 0.01
    fit = fit_exponential_decay(grid[keep], survival[keep], 0.0)
    theta = fit.rate if not fit.degenerate else math.nan
    diag = verify_coupling_function(table, coupling_fn) if coupling_fn else None
    return CouplingReport(grid, survival, fit, theta, taus, n_pairs,
                          int(np.sum(~np.isfinite(taus))), exact_frac, diag)


@dataclass(frozen=True)
class RemoteStartReport:
    '''Gap decay across a remote-start schedule plus the deepest-start sample.'''

    starts: tuple
    mean_gaps: np.ndarray
    se_gaps: np.ndarray
    ratios: np.ndarray
    monotone: bool
    n_keys: int
    measure: EmpiricalMeasure

    def to_dict(self) -> dict:
        return {"starts": list(self.starts),
                "mean_gaps": self.mean_gaps.tolist(),
                "se_gaps": self.se_gaps.tolist(),
                "ratios": self.ratios.tolist(), "monotone": self.monotone,
                "n_keys": self.n_keys, "n_samples": len(self.measure)}


def remote_start_measure(model: Model, solver: SolverConfig, segment: Segment,
                         regime: int, starts, n_keys: int, t_eval: float = 0.0,
                         threads: int = 1) -> RemoteStartReport:
    """Solve from ever more remote starts under shared double-sided noise and
    measure consecutive gaps at t_eval in the product metric.

    Gap means should fall geometrically along the schedule; monotone is False
    when three consecutive means fail to decrease.  The deepest starts supply
    the returned empirical measure, the best available stand-in for the
    limiting law.
    """
    starts = tuple(float(s) for s in starts)
    if len(starts) < 2:
        raise ValidationError("need at least two start times")

    def one(jkey: int):
        sp = derived_solver(solver, _REMOTE, jkey)
        points = remote_start_solve(model, sp, segment, regime, starts, t_eval)
        gaps = [state_distance(points[s], points[s + 1])
                for s in range(len(points) - 1)]
        return gaps, points[-1]

    results = _map_indexed(one, n_keys, threads)
    gaps = np.array([r[0] for r in results])
    samples = [r[1] for r in results]
    means = gaps.mean(axis=0)
    ses = (gaps.std(axis=0, ddof=1) / math.sqrt(n_keys) if n_keys > 1
           else np.zeros(means.size))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(means[:-1] > 0.0, means[1:] / means[:-1], 0.0)
    monotone = True
    run = 0
    for a, b in zip(means[:-1], means[1:]):
        run = run + 1 if b >= a else 0
        if run >= 2:
            monotone = False
    return RemoteStartReport(starts, means, ses, ratios, monotone, n_keys,
                             EmpiricalMeasure(samples))


@dataclass(frozen=True)
class MixingReport:
    '''Decay of ensemble observable means toward empirical-measure values.'''

    times: np.ndarray
    mu: dict
    curves: dict
    fits: dict
    lipschitz: dict
    n_paths: int

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "mu": self.mu,
                "curves": {k: v.tolist() for k, v in self.curves.items()},
                "fits": {k: v.to_dict() for k, v in self.fits.items()},
                "lipschitz": self.lipschitz, "n_paths": self.n_paths}


def _segment_window(full: np.ndarray, idx: int, n_hist: int, r: float,
                    dt: float) -> Segment:
    w = full[idx - n_hist: idx + 1][::-1]
    return Segment(r, dt, np.ascontiguousarray(w))


def mixing_experiment(model: Model, solver: SolverConfig, spec: EnsembleSpec,
                      init: StatePoint, observables, measure: EmpiricalMeasure,
                      threads: int = 1) -> MixingReport:
    """Track |E f(X_t) - mu(f)| for each observable against the empirical
    measure and fit its exponential decay.

    Segments along each path are rebuilt from the dense record so observables
    of the full history are exact; noise floors from the finite ensemble are
    cut from the fit via min_value at twice the jackknife error of mu(f).
    """
    observables = tuple(observables)
    if not observables:
        raise ValidationError("need at least one observable")
    stride = spec.record_stride(solver.dt)
    n_steps = grid_index(spec.horizon, solver.dt)
    if n_steps % stride:
        raise ValidationError("record_dt must divide the horizon")
    n_hist = solver.n_hist
    eval_idx = np.arange(0, n_steps + 1, stride)

    def one(p: int):
        sp = derived_solver(solver, _MIXING, p)
        traj = simulate_path(model, sp, init, 0.0, spec.horizon, 1)
        past = init.segment.values[1:n_hist + 1][::-1]
        full = np.vstack([past, traj.states]) if n_hist else traj.states
        vals = np.empty((len(observables), eval_idx.size))
        for c, g in enumerate(eval_idx):
            seg = _segment_window(full, int(g) + n_hist, n_hist, model.r,
                                  solver.dt)
            point = StatePoint(seg, int(traj.regimes[g]))
            for o, obs in enumerate(observables):
                vals[o, c] = obs(point)
        return vals

    results = _map_indexed(one, spec.n_paths, threads)
    acc = np.zeros((len(observables), eval_idx.size))
    for v in results:
        acc += v
    acc /= spec.n_paths
    times = eval_idx * solver.dt
    mu, curves, fits, lips = {}, {}, {}, {}
    for o, obs in enumerate(observables):
        mu_f = measure.expectation(obs)
        se_f = measure.jackknife_se(obs)
        curve = np.abs(acc[o] - mu_f)
        mu[obs.name] = mu_f
        curves[obs.name] = curve
        fits[obs.name] = fit_exponential_decay(times, curve, spec.burn_in,
                                               min_value=2.0 * se_f)
        lips[obs.name] = obs.lip
    return MixingReport(times, mu, curves, fits, lips, spec.n_paths)


@dataclass(frozen=True)
class InvarianceReport:
    '''Paired before/after comparison of observable means under a push.'''

    t_push: float
    n_samples: int
    rows: dict
    passed: bool

    def to_dict(self) -> dict:
        return {"t_push": self.t_push, "n_samples": self.n_samples,
                "rows": {k: {"mean_diff": v[0], "se": v[1], "passed": v[2]}
                         for k, v in self.rows.items()},
                "passed": self.passed}


def invariance_check(model: Model, solver: SolverConfig,
                     measure: EmpiricalMeasure, t_push: float, observables,
                     threads: int = 1) -> InvarianceReport:
    """Push every sample of the measure forward by t_push with fresh keyed
    noise and compare observable means pairwise.

    A stationary sample leaves each mean unchanged up to Monte Carlo error;
    each row passes when |mean difference| <= 3 jackknife errors of the
    paired differences (zero spread demands exact equality).
    """
    observables = tuple(observables)
    if t_push <= 0.0:
        raise ValidationError("t_push must be positive")
    n_steps = grid_index(t_push, solver.dt)

    def one(jkey: int):
        sp = derived_solver(solver, PUSH_STREAM, jkey)
        traj = simulate_path(model, sp, measure.samples[jkey], 0.0, t_push,
                             max(1, n_steps))
        return traj.final

    pushed = _map_indexed(one, len(measure), threads)
    rows = {}
    ok = True
    n = len(measure)
    for obs in observables:
        before = measure.evaluate(obs)
        after = np.array([float(obs(p)) for p in pushed])
        diff = after - before
        mean = float(diff.mean())
        if n > 1:
            total = diff.sum()
            loo = (total - diff) / (n - 1)
            se = float(math.sqrt((n - 1) / n * ((loo - loo.mean()) ** 2).sum()))
        else:
            se = 0.0
        passed = abs(mean) <= 3.0 * se if se > 0.0 else mean == 0.0
        rows[obs.name] = (mean, se, bool(passed))
        ok = ok and passed
    return InvarianceReport(float(t_push), n, rows, ok)
