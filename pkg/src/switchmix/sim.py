"""Spectral mild-solution integration with regime switching and delay.

Every linear operator in the family is diagonal in one shared basis, so a
path is a vector of spectral coefficients advanced mode by mode with the
exponential update: semigroup factor on the state and the noise increment,
first exponential-integrator weight on the drift.  Base steps split exactly
at chain jump times, which removes regime-misattribution bias; noise splits
use the conditional (bridge) law so windows remain consistent across start
times.

All randomness is slot-keyed (see rng): increments over a fixed substep are
bit-identical whenever they are regenerated, which gives exact window
restarts, shared-noise pairs, and remote-start consistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernel
from .chain import (ChainPath, GeneratorMatrix, IntervalTable, PoissonField,
                    build_intervals, simulate_chain)
from .certify import ModelCoefficients
from .core import (DelayMeasure, Segment, StatePoint, ValidationError,
                   delay_integral)
from .rng import BRIDGE_STREAM, PATH_STREAM, WIENER_STREAM, derive_key, keyed_generator

__all__ = [
    "OperatorFamily",
    "AffineCoefficients",
    "Model",
    "SolverConfig",
    "WienerField",
    "certify_affine",
    "phi_factor",
    "exp_euler_step",
    "SimulationDiverged",
    "Trajectory",
    "simulate_path",
    "PairResult",
    "simulate_pair_shared_noise",
    "remote_start_solve",
    "derived_solver",
    "trajectory_segment_norms",
    "save_checkpoint",
    "load_checkpoint",
    "PieceSchedule",
    "run_schedule",
]


class SimulationDiverged(RuntimeError):
    '''A state coefficient became non-finite; carries the first bad time.'''

    def __init__(self, t_bad: float):
        super().__init__(f"non-finite state near t={t_bad!r}")
        self.t_bad = t_bad


@dataclass(frozen=True)
class OperatorFamily:
    '''Per-regime spectral decay rates, one non-decreasing positive row per
    regime, all in the shared eigenbasis.'''

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.array(self.eigenvalues, dtype=np.float64)
        if ev.ndim != 2 or ev.size == 0:
            raise ValidationError("eigenvalues must be (n_states, n_modes)")
        if not np.isfinite(ev).all() or (ev <= 0.0).any():
            raise ValidationError("eigenvalues must be positive and finite")
        if ev.shape[1] > 1 and (np.diff(ev, axis=1) < 0).any():
            raise ValidationError("eigenvalue rows must be non-decreasing")
        ev.flags.writeable = False
        object.__setattr__(self, "eigenvalues", ev)

    @property
    def n_states(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[1]

    def lambda1(self) -> np.ndarray:
        return self.eigenvalues[:, 0]


def _array3(x, shape, name):
    a = np.array(x, dtype=np.float64)
    if a.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name} must be finite")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AffineCoefficients:
    """Affine-in-state drift and noise family.

    Drift of regime k at segment x:  g_lin[k] x(0) + d_del[k] (rho * x) + g_const[k],
    with rho * x the delay average of the segment.  Noise increment image:
    s_const[k] dw + x(0) * (s_head[k] dw) + (rho * x) * (s_del[k] dw), the
    products taken entrywise per mode.  g_lin must be symmetric so its top
    eigenvalue certifies the one-sided drift bound.
    """

    g_lin: np.ndarray
    d_del: np.ndarray
    g_const: np.ndarray
    s_const: np.ndarray
    s_head: np.ndarray
    s_del: np.ndarray

    def __post_init__(self):
        g = np.array(self.g_lin, dtype=np.float64)
        if g.ndim != 3 or g.shape[1] != g.shape[2]:
            raise ValidationError("g_lin must be (n_states, n_modes, n_modes)")
        ns, nm = g.shape[0], g.shape[1]
        mw = np.array(self.s_const, dtype=np.float64).shape[-1]
        object.__setattr__(self, "g_lin", _array3(g, (ns, nm, nm), "g_lin"))
        object.__setattr__(self, "d_del", _array3(self.d_del, (ns, nm, nm), "d_del"))
        object.__setattr__(self, "g_const", _array3(self.g_const, (ns, nm), "g_const"))
        object.__setattr__(self, "s_const", _array3(self.s_const, (ns, nm, mw), "s_const"))
        object.__setattr__(self, "s_head", _array3(self.s_head, (ns, nm, mw), "s_head"))
        object.__setattr__(self, "s_del", _array3(self.s_del, (ns, nm, mw), "s_del"))
        if np.abs(self.g_lin - np.swapaxes(self.g_lin, 1, 2)).max() > 1e-12:
            raise ValidationError("g_lin blocks must be symmetric")

    @property
    def n_states(self) -> int:
        return self.g_lin.shape[0]

    @property
    def n_modes(self) -> int:
        return self.g_lin.shape[1]

    @property
    def m_w(self) -> int:
        return self.s_const.shape[2]


@dataclass(frozen=True)
class Model:
    '''Operators, coefficients, delay measure, weight exponent and switching
    generator, checked for mutual consistency.'''

    operators: OperatorFamily
    affine: AffineCoefficients
    rho: DelayMeasure
    r: float
    generator: GeneratorMatrix

    def __post_init__(self):
        if not (self.operators.n_states == self.affine.n_states
                == self.generator.n_states):
            raise ValidationError("state counts of operators, coefficients and "
                                  "generator must agree")
        if self.operators.n_modes != self.affine.n_modes:
            raise ValidationError("mode counts of operators and coefficients "
                                  "must agree")
        if not (self.r > 0.0) or not math.isfinite(self.r):
            raise ValidationError("weight exponent r must be positive")
        object.__setattr__(self, "r", float(self.r))

    @property
    def n_modes(self) -> int:
        return self.operators.n_modes

    @property
    def n_states(self) -> int:
        return self.operators.n_states

    @property
    def m_w(self) -> int:
        return self.affine.m_w

    def coefficients(self) -> ModelCoefficients:
        return certify_affine(self.affine, self.operators, self.rho, self.r)

    def interval_table(self) -> IntervalTable:
        return build_intervals(self.generator)


_CLAMP = 1e-300


def certify_affine(affine: AffineCoefficients, operators: OperatorFamily,
                   rho: DelayMeasure, r: float) -> ModelCoefficients:
    """Structural constants certified from the affine family.

    Per regime: drift expansion 2 max-eig(g_lin) + opnorm(d_del) (symmetric
    part plus worst-case delay coupling), delay feedback opnorm(d_del), and a
    shared noise bound 2 max_k (frob(s_head)^2 + frob(s_del)^2) via
    Cauchy-Schwarz and the delay measure's Jensen inequality.  Exact zeros in
    beta or the noise bound are clamped to 1e-300 so strict positivity checks
    stay meaningful.
    """
    if affine.n_states != operators.n_states:
        raise ValidationError("state counts must agree")
    ns = affine.n_states
    alpha = np.empty(ns)
    beta = np.empty(ns)
    lip = 0.0
    for k in range(ns):
        top = float(np.linalg.eigvalsh(affine.g_lin[k]).max())
        dn = float(np.linalg.norm(affine.d_del[k], 2))
        alpha[k] = 2.0 * top + dn
        beta[k] = max(dn, _CLAMP)
        hs = (float(np.linalg.norm(affine.s_head[k])) ** 2
              + float(np.linalg.norm(affine.s_del[k])) ** 2)
        lip = max(lip, 2.0 * hs)
    return ModelCoefficients(operators.lambda1(), alpha, beta,
                             max(lip, _CLAMP), r, rho)


def phi_factor(lam, dt: float):
    '''First exponential-integrator weight (1 - exp(-lam dt)) / lam with a
    series branch below lam dt = 1e-6; scalar in, scalar out.'''
    from ._kernel_pure import phi_weight
    arr = np.atleast_1d(np.asarray(lam, dtype=np.float64))
    out = phi_weight(arr, dt)
    return float(out[0]) if np.ndim(lam) == 0 else out


@dataclass(frozen=True)
class SolverConfig:
    '''Grid and seed choices; dt must divide 1 and t_hist must sit on the
    grid.  No defaults: these are scientific parameters.'''

    dt: float
    t_hist: float
    seed_wiener: int
    seed_poisson: int

    def __post_init__(self):
        if not (0.0 < self.dt <= 1.0):
            raise ValidationError("dt must lie in (0, 1]")
        n_sub = round(1.0 / self.dt)
        if abs(n_sub * self.dt - 1.0) > 1e-9:
            raise ValidationError("dt must divide 1 (dyadic substeps per slot)")
        if self.t_hist < 0.0:
            raise ValidationError("t_hist must be non-negative")
        n_hist = round(self.t_hist / self.dt)
        if abs(n_hist * self.dt - self.t_hist) > 1e-9:
            raise ValidationError("t_hist must be a multiple of dt")

    @property
    def n_sub(self) -> int:
        return round(1.0 / self.dt)

    @property
    def n_hist(self) -> int:
        return round(self.t_hist / self.dt)


def derived_solver(solver: SolverConfig, stream: int, index: int) -> SolverConfig:
    '''Per-path solver with independently keyed noise streams.'''
    return replace(solver,
                   seed_wiener=derive_key(solver.seed_wiener, PATH_STREAM,
                                          stream, index),
                   seed_poisson=derive_key(solver.seed_poisson, PATH_STREAM,
                                           stream, index))


class WienerField:
    """Double-sided Wiener increments on the dyadic substep grid.

    Slot m holds the (n_sub, m_w) increments over [m + j dt, m + (j+1) dt),
    each N(0, dt), generated from a stream keyed on (key, m): regeneration is
    bit-identical and disjoint substeps are independent.  bridge(m, cell)
    returns the keyed stream used to split cell increments at jump times.
    """

    __slots__ = ("key", "n_sub", "m_w", "dt", "_cache")

    def __init__(self, key: int, n_sub: int, m_w: int, dt: float):
        self.key = int(key)
        self.n_sub = int(n_sub)
        self.m_w = int(m_w)
        self.dt = float(dt)
        self._cache: dict[int, np.ndarray] = {}

    def slot(self, m: int) -> np.ndarray:
        m = int(m)
        hit = self._cache.get(m)
        if hit is not None:
            return hit
        rng = keyed_generator(self.key, WIENER_STREAM, m)
        arr = rng.standard_normal((self.n_sub, self.m_w)) * math.sqrt(self.dt)
        arr.flags.writeable = False
        self._cache[m] = arr
        return arr

    def bridge(self, m: int, cell: int) -> np.random.Generator:
        return keyed_generator(self.key, BRIDGE_STREAM, m, cell)


def grid_index(t: float, dt: float) -> int:
    '''Index of t on the global grid {g dt}; rejects off-grid times.'''
    g = round(t / dt)
    if abs(g * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise ValidationError(f"time {t} does not lie on the dt={dt} grid")
    return int(g)


@dataclass(frozen=True)
class PieceSchedule:
    '''Flat constant-regime schedule consumed by the kernel.'''

    dur: np.ndarray
    frac: np.ndarray
    regime: np.ndarray
    dw: np.ndarray
    grid_end: np.ndarray

    @property
    def n_grid_steps(self) -> int:
        return int(self.grid_end.sum())


def _split_cell(row_dw, cell_start, dt, jump_t, jump_s, r0, zgen, m_w):
    '''Split one base cell at in-cell jump times; conditional noise split.'''
    offs = np.clip(jump_t - cell_start, 0.0, dt)
    durs = np.diff(np.concatenate([[0.0], offs, [dt]]))
    fracs = np.concatenate([[0.0], offs])
    regs = np.concatenate([[r0], jump_s]).astype(np.int64)
    n_p = durs.size
    dws = np.zeros((n_p, m_w))
    w_rem = row_dw.copy()
    rem = dt
    for i in range(n_p - 1):
        d = durs[i]
        z = zgen.standard_normal(m_w)
        if rem > 0.0 and d > 0.0:
            wl = (d / rem) * w_rem + math.sqrt(d * (rem - d) / rem) * z
        else:
            wl = np.zeros(m_w)
        dws[i] = wl
        w_rem = w_rem - wl
        rem -= d
    dws[n_p - 1] = w_rem
    ends = np.zeros(n_p, dtype=np.uint8)
    ends[n_p - 1] = 1
    return durs, fracs, regs, dws, ends


def _build_schedule(chain: ChainPath, wiener: WienerField, solver: SolverConfig,
                    g0: int, g1: int, m_w: int) -> PieceSchedule:
    '''Cells [g dt, (g+1) dt) for g in [g0, g1), split at chain jumps.'''
    dt, n_sub = solver.dt, solver.n_sub
    durs, fracs, regs, dws, ends = [], [], [], [], []

    jt = chain.jump_times
    jcell = np.empty(0, dtype=np.int64)
    if jt.size:
        slots = np.floor(jt).astype(np.int64)
        jcell = slots * n_sub + np.minimum(
            ((jt - slots) * n_sub).astype(np.int64), n_sub - 1)

    def plain_block(c_lo, c_hi, slot):
        k = c_hi - c_lo
        i0 = c_lo - slot * n_sub
        durs.append(np.full(k, dt))
        fracs.append(np.zeros(k))
        regs.append(chain.states_at(np.arange(c_lo, c_hi) * dt))
        dws.append(wiener.slot(slot)[i0:i0 + k])
        ends.append(np.ones(k, dtype=np.uint8))

    slot_lo = g0 // n_sub if g1 > g0 else 0
    slot_hi = (g1 - 1) // n_sub if g1 > g0 else -1
    for m in range(slot_lo, slot_hi + 1):
        c_lo = max(g0, m * n_sub)
        c_hi = min(g1, (m + 1) * n_sub)
        sel = np.nonzero((jcell >= c_lo) & (jcell < c_hi))[0]
        if sel.size == 0:
            plain_block(c_lo, c_hi, m)
            continue
        cells = np.unique(jcell[sel])
        cursor = c_lo
        for cell in cells:
            cell = int(cell)
            if cell > cursor:
                plain_block(cursor, cell, m)
            in_cell = sel[jcell[sel] == cell]
            cell_start = cell * dt
            r0 = chain.states_at(np.array([cell_start]))[0]
            row = wiener.slot(m)[cell - m * n_sub]
            zgen = wiener.bridge(m, cell - m * n_sub)
            d, f, rg, dwp, en = _split_cell(row, cell_start, dt,
                                            jt[in_cell],
                                            chain.jump_states[in_cell],
                                            r0, zgen, m_w)
            durs.append(d)
            fracs.append(f)
            regs.append(rg)
            dws.append(dwp)
            ends.append(en)
            cursor = cell + 1
        if cursor < c_hi:
            plain_block(cursor, c_hi, m)

    if not durs:
        return PieceSchedule(np.empty(0), np.empty(0),
                             np.empty(0, dtype=np.int64),
                             np.empty((0, m_w)), np.empty(0, dtype=np.uint8))
    return PieceSchedule(
        np.ascontiguousarray(np.concatenate(durs)),
        np.ascontiguousarray(np.concatenate(fracs)),
        np.ascontiguousarray(np.concatenate(regs).astype(np.int64)),
        np.ascontiguousarray(np.vstack(dws)),
        np.ascontiguousarray(np.concatenate(ends)),
    )


def _packed_model(model: Model):
    aff = model.affine
    return (np.ascontiguousarray(model.operators.eigenvalues),
            np.ascontiguousarray(aff.g_lin), np.ascontiguousarray(aff.d_del),
            np.ascontiguousarray(aff.g_const), np.ascontiguousarray(aff.s_const),
            np.ascontiguousarray(aff.s_head), np.ascontiguousarray(aff.s_del))


def _atom_arrays(model: Model, dt: float):
    units = np.ascontiguousarray(-model.rho.locations / dt)
    weights = np.ascontiguousarray(model.rho.weights)
    return units, weights


def run_schedule(model: Model, dt: float, hist: np.ndarray,
                 schedule: PieceSchedule, record_stride: int = 1
                 ) -> tuple[np.ndarray, np.ndarray, int]:
    """Drive the selected kernel over a prepared schedule.

    hist is (n_hist + 1, n_modes), newest first, and is returned updated to
    the final window; out holds states at every record_stride-th grid time
    starting from the initial one.  The integer is -1 or the index of the
    first piece with a non-finite state.
    """
    n_steps = schedule.n_grid_steps
    if n_steps % record_stride != 0:
        raise ValidationError("record stride must divide the number of steps")
    out = np.empty((n_steps // record_stride + 1, hist.shape[1]))
    hist = np.ascontiguousarray(hist)
    atoms, weights = _atom_arrays(model, dt)
    bad = _kernel.run_pieces(*_packed_model(model), atoms, weights, dt, hist,
                             schedule.dur, schedule.frac, schedule.regime,
                             np.ascontiguousarray(schedule.dw),
                             schedule.grid_end, record_stride, out)
    return out, hist, int(bad)


def _prepare_hist(model: Model, solver: SolverConfig, seg: Segment) -> np.ndarray:
    if abs(seg.dt - solver.dt) > 1e-12:
        raise ValidationError("initial segment grid spacing must equal solver dt")
    if seg.r != model.r:
        raise ValidationError("initial segment weight exponent must equal model r")
    if seg.n_modes != model.n_modes:
        raise ValidationError("initial segment mode count must match the model")
    if np.any(seg.tail_limit != 0.0):
        raise ValidationError("simulation requires a zero segment tail limit")
    n_pts = solver.n_hist + 1
    if seg.n_grid < n_pts:
        raise ValidationError("initial segment must cover t_hist")
    return seg.values[:n_pts].copy()


@dataclass(frozen=True)
class Trajectory:
    '''Recorded states and regimes on the record grid plus the final point.'''

    times: np.ndarray
    states: np.ndarray
    regimes: np.ndarray
    final: StatePoint
    chain: ChainPath
    record_stride: int

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def exp_euler_step(model: Model, seg: Segment, regime: int, dt: float,
                   dw: np.ndarray) -> Segment:
    """One exponential-Euler update of a segment under a fixed regime.

    dt = 0 returns the segment unchanged; otherwise dt must equal the segment
    grid spacing so the head can be appended and the grid rolled.
    """
    if dt == 0.0:
        return seg
    if abs(dt - seg.dt) > 1e-12:
        raise ValidationError("step must equal the segment grid spacing")
    if not (0 <= regime < model.n_states):
        raise ValidationError("regime out of range")
    dw = np.asarray(dw, dtype=np.float64).reshape(-1)
    if dw.shape != (model.m_w,):
        raise ValidationError("noise increment has wrong width")
    aff = model.affine
    x = seg.head()
    xd = delay_integral(seg, model.rho)
    b = aff.g_lin[regime] @ x + aff.d_del[regime] @ xd + aff.g_const[regime]
    z = (aff.s_const[regime] @ dw + x * (aff.s_head[regime] @ dw)
         + xd * (aff.s_del[regime] @ dw))
    lam = model.operators.eigenvalues[regime]
    e = np.exp(-lam * dt)
    from ._kernel_pure import phi_weight
    phi = phi_weight(lam, dt)
    return seg.append_head(e * x + phi * b + e * z)


def simulate_path(model: Model, solver: SolverConfig, init: StatePoint,
                  t0: float, t1: float, record_stride: int = 1,
                  chain: ChainPath | None = None) -> Trajectory:
    """Integrate one path from (t0, init) to t1, recording every
    record_stride-th base grid time.

    The switching chain is simulated from the slot-keyed Poisson field unless
    one is supplied; noise comes from the slot-keyed Wiener field, so rerunning
    any window of the same model and seeds is bit-identical.
    """
    g0 = grid_index(t0, solver.dt)
    g1 = grid_index(t1, solver.dt)
    if g1 < g0:
        raise ValidationError("horizon before start")
    if not (0 <= init.regime < model.n_states):
        raise ValidationError("initial regime out of range")
    table = model.interval_table()
    if chain is None:
        poisson = PoissonField(solver.seed_poisson, table.m_bound)
        chain = simulate_chain(table, init.regime, t0, t1, poisson)
    wiener = WienerField(solver.seed_wiener, solver.n_sub, model.m_w, solver.dt)
    schedule = _build_schedule(chain, wiener, solver, g0, g1, model.m_w)
    hist = _prepare_hist(model, solver, init.segment)
    out, hist, bad = run_schedule(model, solver.dt, hist, schedule, record_stride)
    if bad >= 0:
        raise SimulationDiverged(t0 + float(schedule.dur[:bad + 1].sum()))
    n_rec = out.shape[0]
    times = (g0 + record_stride * np.arange(n_rec)) * solver.dt
    regimes = chain.states_at(times)
    final_seg = Segment(model.r, solver.dt, hist)
    final = StatePoint(final_seg, int(regimes[-1]))
    return Trajectory(times, out, regimes, final, chain, record_stride)


def _weighted_window_max(norms_full: np.ndarray, n_hist: int, r: float,
                         dt: float, n_out: int) -> np.ndarray:
    '''Sliding weighted maximum over the trailing history window.'''
    out = np.zeros(n_out)
    for i in range(n_hist + 1):
        w = math.exp(-r * dt * i)
        np.maximum(out, w * norms_full[n_hist - i:n_hist - i + n_out], out=out)
    return out


def trajectory_segment_norms(traj: Trajectory, init_segment: Segment,
                             r: float) -> np.ndarray:
    '''Weighted history norm at every record time; needs record_stride 1.'''
    if traj.record_stride != 1:
        raise ValidationError("segment norms require record_stride 1")
    n_hist = init_segment.n_grid - 1
    past = init_segment.values[1:][::-1]
    full = np.vstack([past, traj.states]) if n_hist else traj.states
    norms_full = np.linalg.norm(full, axis=1)
    return _weighted_window_max(norms_full, n_hist, r, init_segment.dt,
                                traj.states.shape[0])


@dataclass(frozen=True)
class PairResult:
    '''Shared-noise pair: difference statistics plus both trajectories.'''

    times: np.ndarray
    diff_norm_sq: np.ndarray
    diff_segment_norm_sq: np.ndarray
    traj_a: Trajectory
    traj_b: Trajectory


def simulate_pair_shared_noise(model: Model, solver: SolverConfig,
                               seg_a: Segment, seg_b: Segment, regime: int,
                               t0: float, t1: float) -> PairResult:
    """Two solutions driven by the same chain and the same Wiener field,
    differing only in the initial segment.  Identical initial segments give
    bit-identical paths, so the difference is exactly zero.
    """
    g0 = grid_index(t0, solver.dt)
    g1 = grid_index(t1, solver.dt)
    if g1 < g0:
        raise ValidationError("horizon before start")
    table = model.interval_table()
    poisson = PoissonField(solver.seed_poisson, table.m_bound)
    chain = simulate_chain(table, regime, t0, t1, poisson)
    wiener = WienerField(solver.seed_wiener, solver.n_sub, model.m_w, solver.dt)
    schedule = _build_schedule(chain, wiener, solver, g0, g1, model.m_w)

    results = []
    for seg in (seg_a, seg_b):
        hist = _prepare_hist(model, solver, seg)
        out, hist, bad = run_schedule(model, solver.dt, hist, schedule, 1)
        if bad >= 0:
            raise SimulationDiverged(t0 + float(schedule.dur[:bad + 1].sum()))
        results.append((out, hist))
    (out_a, hist_a), (out_b, hist_b) = results

    n_rec = out_a.shape[0]
    times = (g0 + np.arange(n_rec)) * solver.dt
    regimes = chain.states_at(times)
    trajs = []
    for out, hist in results:
        seg_fin = Segment(model.r, solver.dt, hist)
        trajs.append(Trajectory(times, out, regimes,
                                StatePoint(seg_fin, int(regimes[-1])),
                                chain, 1))

    gamma = out_a - out_b
    diff_sq = np.einsum("ij,ij->i", gamma, gamma)
    n_hist = solver.n_hist
    past = (seg_a.values[:n_hist + 1] - seg_b.values[:n_hist + 1])[1:][::-1]
    full = np.vstack([past, gamma]) if n_hist else gamma
    norms_full = np.linalg.norm(full, axis=1)
    seg_norm = _weighted_window_max(norms_full, n_hist, model.r, solver.dt, n_rec)
    return PairResult(times, diff_sq, seg_norm ** 2, trajs[0], trajs[1])


def remote_start_solve(model: Model, solver: SolverConfig, segment: Segment,
                       regime: int, starts, t_eval: float = 0.0
                       ) -> list[StatePoint]:
    """Solve from the same initial data at increasingly remote start times,
    all driven by the same double-sided noise fields, and return the states
    at t_eval.  starts must be strictly decreasing and < t_eval.
    """
    starts = [float(s) for s in starts]
    if any(b >= a for a, b in zip(starts, starts[1:])):
        raise ValidationError("start schedule must be strictly decreasing")
    if any(s >= t_eval for s in starts):
        raise ValidationError("starts must precede the evaluation time")
    out = []
    for s in starts:
        traj = simulate_path(model, solver, StatePoint(segment, regime),
                             s, t_eval,
                             record_stride=max(1, grid_index(t_eval, solver.dt)
                                               - grid_index(s, solver.dt)))
        out.append(traj.final)
    return out


_CKPT_SCHEMA = "switchmix-ckpt/1"


def save_checkpoint(path, t: float, state: StatePoint) -> None:
    '''Binary checkpoint of a path state, resumable bit-exactly.'''
    np.savez(path, schema=_CKPT_SCHEMA, t=float(t), regime=state.regime,
             r=state.segment.r, dt=state.segment.dt,
             values=state.segment.values, tail=state.segment.tail_limit)


def load_checkpoint(path) -> tuple[float, StatePoint]:
    with np.load(path, allow_pickle=False) as z:
        if str(z["schema"]) != _CKPT_SCHEMA:
            raise ValidationError(f"unknown checkpoint schema {z['schema']!r}")
        seg = Segment(float(z["r"]), float(z["dt"]), z["values"], z["tail"])
        return float(z["t"]), StatePoint(seg, int(z["regime"]))
