"""Switching chains driven by a marked Poisson field.

A conservative generator matrix is compiled into a table of half-open mark
intervals, one per off-diagonal transition, laid out contiguously per row in
increasing target order.  A chain path is then a deterministic function of an
initial state and a Poisson random field on time x [0, m_bound]: at each field
point (t, u) the state jumps by the table offset for (state, u).  Because the
field is slot-keyed, two chains fed the same field coalesce exactly and stay
together, which is what the coupling experiments exploit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ValidationError
from .rng import POISSON_STREAM, keyed_generator

__all__ = [
    "GeneratorMatrix",
    "IntervalTable",
    "build_intervals",
    "jump_offset",
    "PoissonField",
    "ChainPath",
    "simulate_chain",
    "gillespie_chain",
    "couple_chains",
    "two_chain_generator",
    "verify_coupling_function",
    "CouplingFunctionReport",
]


@dataclass(frozen=True)
class GeneratorMatrix:
    """Conservative rate matrix: off-diagonal >= 0, rows summing to zero.

    rate_bound, when given, asserts a uniform bound on the exit rates
    (needed by the truncated countable-space workflow).
    """

    q: np.ndarray
    rate_bound: float | None = None

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape[0] < 1:
            raise ValidationError("generator must be a square matrix")
        if not np.isfinite(q).all():
            raise ValidationError("generator entries must be finite")
        off = q - np.diag(np.diag(q))
        if off.min() < -1e-12:
            raise ValidationError("off-diagonal rates must be non-negative")
        if np.abs(q.sum(axis=1)).max() > 1e-12:
            raise ValidationError("generator rows must sum to zero within 1e-12")
        q.flags.writeable = False
        object.__setattr__(self, "q", q)
        if self.rate_bound is not None:
            rb = float(self.rate_bound)
            if rb < self.exit_rates().max() - 1e-12:
                raise ValidationError("rate_bound is below an exit rate")
            object.__setattr__(self, "rate_bound", rb)

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.q)

    def is_irreducible(self) -> bool:
        '''Strong connectivity of the support graph (boolean reachability).'''
        n = self.n_states
        adj = (self.q > 0.0)
        reach = adj | np.eye(n, dtype=bool)
        for _ in range(n):
            new = reach | (reach @ reach)
            if (new == reach).all():
                break
            reach = new
        return bool(reach.all() and reach.T.all())

    def stationary_distribution(self) -> np.ndarray:
        '''Solve pi Q = 0, sum pi = 1 (least squares, for diagnostics).'''
        n = self.n_states
        a = np.vstack([self.q.T, np.ones(n)])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
        return pi


class IntervalTable:
    """Per-state mark intervals encoding the generator.

    Row k holds the half-open intervals for each target l != k with rate
    q[k, l] > 0, contiguous from 0 in increasing l.  A mark u in row k's
    interval for l sends the chain from k to l; marks beyond the row's total
    measure do nothing.  m_bound is the maximal row measure, the height of the
    mark space shared by every state.
    """

    __slots__ = ("targets", "edges", "m_bound", "n_states")

    def __init__(self, targets, edges, m_bound):
        self.targets = tuple(np.asarray(t, dtype=np.int64) for t in targets)
        self.edges = tuple(np.asarray(e, dtype=np.float64) for e in edges)
        self.m_bound = float(m_bound)
        self.n_states = len(self.targets)

    def row_measure(self, k: int) -> float:
        e = self.edges[k]
        return float(e[-1]) if e.size else 0.0

    def row_intervals(self, k: int):
        '''List of (target, left, right) for row k.'''
        e = self.edges[k]
        lefts = np.concatenate([[0.0], e[:-1]]) if e.size else e
        return [(int(l), float(a), float(b))
                for l, a, b in zip(self.targets[k], lefts, e)]

    def breakpoints(self, k: int) -> np.ndarray:
        '''Interval endpoints of row k, including 0 and m_bound.'''
        return np.unique(np.concatenate([[0.0, self.m_bound], self.edges[k]]))


def build_intervals(gen: GeneratorMatrix) -> IntervalTable:
    '''Compile a generator into its interval table.'''
    n = gen.n_states
    targets, edges = [], []
    for k in range(n):
        row_t, row_e, acc = [], [], 0.0
        for l in range(n):
            if l == k:
                continue
            rate = gen.q[k, l]
            if rate > 0.0:
                acc += rate
                row_t.append(l)
                row_e.append(acc)
        targets.append(np.array(row_t, dtype=np.int64))
        edges.append(np.array(row_e, dtype=np.float64))
    m_bound = max((e[-1] for e in edges if e.size), default=0.0)
    return IntervalTable(targets, edges, m_bound)


def jump_offset(table: IntervalTable, k: int, u: float) -> int:
    '''Jump size l - k encoded by mark u in row k; 0 outside the row's range.'''
    if not (0.0 <= u <= table.m_bound):
        raise ValidationError(f"mark {u} outside [0, {table.m_bound}]")
    e = table.edges[k]
    if e.size == 0 or u >= e[-1]:
        return 0
    i = int(np.searchsorted(e, u, side="right"))
    return int(table.targets[k][i]) - k


class PoissonField:
    """Double-sided unit-intensity Poisson field on time x [0, m_bound].

    Each unit time slot m (any integer, negative included) is generated
    independently from a counter-based stream keyed on (key, m): regenerating
    a slot is bit-identical, and extending a window to earlier start times
    never changes the points seen in later slots.  Points in a slot are sorted
    by time with marks breaking ties.
    """

    __slots__ = ("key", "m_bound", "_cache")

    def __init__(self, key: int, m_bound: float):
        if m_bound < 0.0 or not math.isfinite(m_bound):
            raise ValidationError("m_bound must be finite and non-negative")
        self.key = int(key)
        self.m_bound = float(m_bound)
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def slot_events(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        '''(times, marks) of the field points in [m, m + 1).'''
        m = int(m)
        hit = self._cache.get(m)
        if hit is not None:
            return hit
        rng = keyed_generator(self.key, POISSON_STREAM, m)
        n = int(rng.poisson(self.m_bound)) if self.m_bound > 0.0 else 0
        times = m + rng.random(n)
        marks = rng.random(n) * self.m_bound
        order = np.lexsort((marks, times))
        out = (times[order], marks[order])
        self._cache[m] = out
        return out

    def events_in(self, s: float, t: float) -> tuple[np.ndarray, np.ndarray]:
        '''Field points with time in (s, t], in time order.'''
        if t < s:
            raise ValidationError("window end before start")
        ts, us = [], []
        for m in range(math.floor(s), math.floor(t) + 1):
            tm, um = self.slot_events(m)
            keep = (tm > s) & (tm <= t)
            ts.append(tm[keep])
            us.append(um[keep])
        if not ts:
            return np.empty(0), np.empty(0)
        return np.concatenate(ts), np.concatenate(us)


@dataclass(frozen=True)
class ChainPath:
    '''Right-continuous chain trajectory: start point plus recorded jumps.'''

    start_time: float
    start_state: int
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_states: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=np.float64)
        js = np.asarray(self.jump_states, dtype=np.int64)
        if jt.shape != js.shape:
            raise ValidationError("jump times and states must align")
        if jt.size and (np.diff(jt) < 0).any():
            raise ValidationError("jump times must be non-decreasing")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_states", js)
        object.__setattr__(self, "start_state", int(self.start_state))

    def state_at(self, t: float) -> int:
        if t < self.start_time - 1e-12:
            raise ValidationError("query before the path start")
        i = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.start_state if i == 0 else int(self.jump_states[i - 1])

    def states_at(self, times: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.jump_times, times, side="right")
        seq = np.concatenate([[self.start_state], self.jump_states])
        return seq[idx].astype(np.int64)

    def occupation(self, state: int, t0: float, t1: float) -> float:
        '''Fraction of [t0, t1] spent in `state`.'''
        if t1 <= t0:
            raise ValidationError("empty occupation window")
        knots = np.concatenate([[t0], np.clip(self.jump_times, t0, t1), [t1]])
        seq = self.states_at(knots[:-1])
        spans = np.diff(knots)
        return float(spans[seq == state].sum() / (t1 - t0))

    def transition_count(self, k: int, l: int) -> int:
        '''Number of recorded jumps from k to l.'''
        if self.jump_times.size == 0:
            return 0
        prev = np.concatenate([[self.start_state], self.jump_states[:-1]])
        return int(((prev == k) & (self.jump_states == l)).sum())

    def to_dict(self) -> dict:
        return {
            "start": [self.start_time, self.start_state],
            "jumps": [[float(t), int(s)]
                      for t, s in zip(self.jump_times, self.jump_states)],
        }

    @staticmethod
    def from_dict(d: dict) -> "ChainPath":
        t0, s0 = d["start"]
        jumps = d.get("jumps", [])
        return ChainPath(float(t0), int(s0),
                         np.array([j[0] for j in jumps]),
                         np.array([j[1] for j in jumps], dtype=np.int64))


def _check_state(table_or_gen, i: int):
    n = table_or_gen.n_states
    if not (0 <= i < n):
        raise ValidationError(f"state {i} outside 0..{n - 1}")


def simulate_chain(table: IntervalTable, i: int, s: float, t: float,
                   poisson: PoissonField) -> ChainPath:
    '''Drive the chain from (s, i) to time t by scanning field points in (s, t].'''
    _check_state(table, i)
    if t < s:
        raise ValidationError("horizon before start")
    times, marks = poisson.events_in(s, t)
    state = int(i)
    jt, js = [], []
    for time, u in zip(times, marks):
        off = jump_offset(table, state, u)
        if off != 0:
            state += off
            jt.append(time)
            js.append(state)
    return ChainPath(s, i, np.array(jt), np.array(js, dtype=np.int64))


def gillespie_chain(gen: GeneratorMatrix, i: int, s: float, t: float,
                    rng: np.random.Generator) -> ChainPath:
    '''Reference simulator: exponential holding times plus categorical targets.'''
    _check_state(gen, i)
    if t < s:
        raise ValidationError("horizon before start")
    n = gen.n_states
    rates = gen.exit_rates()
    cum = []
    for k in range(n):
        row = np.delete(gen.q[k], k)
        cum.append((np.cumsum(row), np.delete(np.arange(n), k)))
    state, now = int(i), s
    jt, js = [], []
    while True:
        rate = rates[state]
        if rate <= 0.0:
            break
        now += rng.exponential(1.0 / rate)
        if now > t:
            break
        c, targets = cum[state]
        state = int(targets[np.searchsorted(c, rng.random() * c[-1], side="right")])
        jt.append(now)
        js.append(state)
    return ChainPath(s, i, np.array(jt), np.array(js, dtype=np.int64))


def couple_chains(table: IntervalTable, i: int, s1: float, s2: float,
                  poisson: PoissonField, t_max: float
                  ) -> tuple[ChainPath, ChainPath, float | None]:
    """Two chains from the same state i started at s1 <= s2, driven by the
    same field.  Returns both paths on [s., t_max] and the first time >= s2 at
    which they agree (None if they have not met by t_max).  Because marks and
    the jump map are shared, the paths are identical from the meeting time on.
    """
    _check_state(table, i)
    if s1 > s2:
        raise ValidationError("first start must not be after the second")
    if t_max < s2:
        raise ValidationError("t_max must be >= the later start")
    head = simulate_chain(table, i, s1, s2, poisson)
    a = head.state_at(s2)
    b = int(i)
    jt1 = list(head.jump_times)
    js1 = list(head.jump_states)
    jt2: list[float] = []
    js2: list[int] = []
    tau = s2 if a == b else None
    times, marks = poisson.events_in(s2, t_max)
    for time, u in zip(times, marks):
        off_a = jump_offset(table, a, u)
        off_b = jump_offset(table, b, u)
        if off_a != 0:
            a += off_a
            jt1.append(time)
            js1.append(a)
        if off_b != 0:
            b += off_b
            jt2.append(time)
            js2.append(b)
        if tau is None and a == b:
            tau = float(time)
    path1 = ChainPath(s1, i, np.array(jt1), np.array(js1, dtype=np.int64))
    path2 = ChainPath(s2, i, np.array(jt2), np.array(js2, dtype=np.int64))
    return path1, path2, tau


def two_chain_generator(table: IntervalTable, v, k: int, l: int) -> float:
    """Action of the two-chain difference generator on v at (k, l): integrate
    u -> v(k - l + h(k, u) - h(l, u)) - v(k - l) over [0, m_bound].

    The integrand is piecewise constant between interval endpoints of rows k
    and l, so the integral is evaluated exactly by splitting at all endpoints
    and sampling midpoints.
    """
    _check_state(table, k)
    _check_state(table, l)
    cuts = np.unique(np.concatenate([table.breakpoints(k), table.breakpoints(l)]))
    base = v(k - l)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        u = 0.5 * (a + b)
        total += (v(k - l + jump_offset(table, k, u) - jump_offset(table, l, u))
                  - base) * (b - a)
    return float(total)


@dataclass(frozen=True)
class CouplingFunctionReport:
    '''Outcome of checking a candidate coupling certificate function.'''

    passed: bool
    max_value: float
    argmax: tuple[int, int]
    f_sup: float
    theta_max: float
    values: dict

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_value": self.max_value,
            "argmax": list(self.argmax),
            "f_sup": self.f_sup,
            "theta_max": self.theta_max,
            "values": {f"{k},{l}": v for (k, l), v in self.values.items()},
        }


def verify_coupling_function(table: IntervalTable, f) -> CouplingFunctionReport:
    """Check the drift condition for a coupling function f on state differences:
    the two-chain generator applied to f must be <= -1 at every ordered pair of
    distinct states.  The admissible exponential moment range for the coupling
    time is then (0, 1 / sup|f|)."""
    n = table.n_states
    values = {}
    worst = -math.inf
    arg = (0, 0)
    for k in range(n):
        for l in range(n):
            if k == l:
                continue
            val = two_chain_generator(table, f, k, l)
            values[(k, l)] = val
            if val > worst:
                worst, arg = val, (k, l)
    f_sup = max(abs(float(f(d))) for d in range(-(n - 1), n))
    theta_max = math.inf if f_sup == 0.0 else 1.0 / f_sup
    passed = worst <= -1.0 + 1e-9 and f_sup > 0.0
    return CouplingFunctionReport(passed, worst, arg, f_sup, theta_max, values)
