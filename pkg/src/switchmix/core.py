"""State vectors, history segments, delay measures and the product metric.

The state of a path at time t is the pair (segment, regime): the segment is
the entire history theta -> X(t + theta) for theta <= 0, stored on a uniform
grid and weighted by exp(r * theta) in the norm, and the regime is the integer
state of the driving switching chain.  A probability measure on the past
(finitely many atoms here) defines the delay functionals entering drift and
noise coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValidationError",
    "DelayMeasure",
    "Segment",
    "StatePoint",
    "segment_norm_r",
    "delay_integral",
    "state_distance",
    "constant_segment",
    "zero_segment",
    "segment_to_dict",
    "segment_from_dict",
    "delay_measure_to_dict",
    "delay_measure_from_dict",
]


class ValidationError(ValueError):
    '''Raised when inputs violate a documented precondition.'''


@dataclass(frozen=True)
class DelayMeasure:
    """Probability measure on the past: finitely many atoms at theta <= 0.

    Atoms are (location, weight) pairs with locations strictly decreasing
    (most recent first) and weights summing to one.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise ValidationError("delay measure needs at least one atom")
        atoms = tuple((float(t), float(w)) for t, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        last = math.inf
        for theta, w in atoms:
            if not (theta <= 0.0) or not math.isfinite(theta):
                raise ValidationError(f"atom location {theta} must be finite and <= 0")
            if theta >= last:
                raise ValidationError("atom locations must be strictly decreasing")
            if w <= 0.0 or not math.isfinite(w):
                raise ValidationError(f"atom weight {w} must be positive")
            last = theta
        if abs(sum(w for _, w in atoms) - 1.0) > 1e-12:
            raise ValidationError("atom weights must sum to 1 within 1e-12")

    @property
    def locations(self) -> np.ndarray:
        return np.array([t for t, _ in self.atoms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    def moment(self, s: float) -> float:
        '''Exponential moment  sum_j w_j * exp(-s * theta_j); 1 at s = 0.'''
        if not math.isfinite(s):
            raise ValidationError("moment order must be finite")
        return float(sum(w * math.exp(-s * t) for t, w in self.atoms))


def point_mass_now() -> DelayMeasure:
    '''The no-memory measure: a single atom at theta = 0.'''
    return DelayMeasure(((0.0, 1.0),))


class Segment:
    """History of a path on the uniform grid 0, -dt, -2 dt, ..., -(n-1) dt.

    values[m] is the state vector at theta = -m * dt (head first).  Beyond the
    stored window the path is modelled by its weighted tail limit: x(theta) is
    taken as exp(-r * theta) * tail_limit, so the weighted norm of the tail is
    exactly ||tail_limit||.  Off-grid evaluation interpolates linearly.
    Instances are immutable; arithmetic returns new segments.
    """

    __slots__ = ("r", "dt", "values", "tail_limit")

    def __init__(self, r: float, dt: float, values, tail_limit=None):
        r = float(r)
        dt = float(dt)
        if not (r > 0.0) or not math.isfinite(r):
            raise ValidationError("weight exponent r must be positive and finite")
        if not (dt > 0.0) or not math.isfinite(dt):
            raise ValidationError("grid spacing dt must be positive and finite")
        vals = np.array(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise ValidationError("values must be a non-empty (n_grid, n_modes) array")
        if not np.isfinite(vals).all():
            raise ValidationError("segment values must be finite")
        if tail_limit is None:
            tail = np.zeros(vals.shape[1])
        else:
            tail = np.array(tail_limit, dtype=np.float64).reshape(-1)
            if tail.shape != (vals.shape[1],):
                raise ValidationError("tail_limit shape must match n_modes")
            if not np.isfinite(tail).all():
                raise ValidationError("tail_limit must be finite")
        vals.flags.writeable = False
        tail.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tail_limit", tail)

    def __setattr__(self, name, value):
        raise AttributeError("Segment is immutable")

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    @property
    def n_grid(self) -> int:
        return self.values.shape[0]

    @property
    def t_hist(self) -> float:
        return (self.n_grid - 1) * self.dt

    def grid_times(self) -> np.ndarray:
        return -self.dt * np.arange(self.n_grid)

    def head(self) -> np.ndarray:
        return self.values[0]

    def norm_r(self) -> float:
        """Weighted sup norm: max over grid of exp(r * theta_m) * ||values[m]||,
        compared against the tail contribution ||tail_limit||."""
        w = np.exp(self.r * self.grid_times())
        grid_part = float(np.max(w * np.linalg.norm(self.values, axis=1)))
        return max(grid_part, float(np.linalg.norm(self.tail_limit)))

    def eval(self, theta: float) -> np.ndarray:
        '''Value at theta <= 0; linear interpolation off-grid, tail rule deeper.'''
        theta = float(theta)
        if theta > 0.0:
            raise ValidationError("segment evaluation requires theta <= 0")
        pos = -theta / self.dt
        n = self.n_grid
        if pos <= (n - 1) + 1e-9:
            if n == 1:
                return self.values[0].copy()
            j0 = min(int(pos), n - 2)
            w = min(max(pos - j0, 0.0), 1.0)
            return (1.0 - w) * self.values[j0] + w * self.values[j0 + 1]
        if np.all(self.tail_limit == 0.0):
            return np.zeros(self.n_modes)
        return math.exp(-self.r * theta) * self.tail_limit

    def append_head(self, value) -> "Segment":
        '''Shift the grid by one step: new head in front, deepest point dropped
        into the tail, tail limit rescaled by exp(-r * dt).'''
        value = np.asarray(value, dtype=np.float64).reshape(-1)
        if value.shape != (self.n_modes,):
            raise ValidationError("new head shape must match n_modes")
        vals = np.vstack([value[None, :], self.values[:-1]])
        tail = self.tail_limit * math.exp(-self.r * self.dt)
        return Segment(self.r, self.dt, vals, tail)

    def _compatible(self, other: "Segment"):
        if (self.r != other.r or self.dt != other.dt
                or self.values.shape != other.values.shape):
            raise ValidationError("segments live on different grids")

    def __sub__(self, other: "Segment") -> "Segment":
        self._compatible(other)
        return Segment(self.r, self.dt, self.values - other.values,
                       self.tail_limit - other.tail_limit)

    def __add__(self, other: "Segment") -> "Segment":
        self._compatible(other)
        return Segment(self.r, self.dt, self.values + other.values,
                       self.tail_limit + other.tail_limit)

    def __mul__(self, c: float) -> "Segment":
        c = float(c)
        return Segment(self.r, self.dt, c * self.values, c * self.tail_limit)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, Segment):
            return NotImplemented
        return (self.r == other.r and self.dt == other.dt
                and self.values.shape == other.values.shape
                and bool(np.all(self.values == other.values))
                and bool(np.all(self.tail_limit == other.tail_limit)))

    def __repr__(self) -> str:
        return (f"Segment(r={self.r}, dt={self.dt}, n_grid={self.n_grid}, "
                f"n_modes={self.n_modes})")


@dataclass(frozen=True)
class StatePoint:
    '''A point of the product space: history segment plus chain regime.'''

    segment: Segment
    regime: int

    def __post_init__(self):
        if int(self.regime) != self.regime or self.regime < 0:
            raise ValidationError("regime must be a non-negative integer index")
        object.__setattr__(self, "regime", int(self.regime))


def segment_norm_r(seg: Segment) -> float:
    '''Weighted sup norm of a segment (see Segment.norm_r).'''
    return seg.norm_r()


def delay_integral(seg: Segment, rho: DelayMeasure) -> np.ndarray:
    '''Average of the segment against the delay measure: sum_j w_j x(theta_j).'''
    out = np.zeros(seg.n_modes)
    for theta, w in rho.atoms:
        out += w * seg.eval(theta)
    return out


def state_distance(a: StatePoint, b: StatePoint) -> float:
    '''Product metric: weighted norm of the segment difference plus a unit
    penalty when the regimes differ.'''
    return (a.segment - b.segment).norm_r() + (0.0 if a.regime == b.regime else 1.0)


def constant_segment(value, r: float, dt: float, t_hist: float) -> Segment:
    '''Segment equal to `value` on the whole stored grid, zero tail limit.'''
    value = np.asarray(value, dtype=np.float64).reshape(-1)
    n = int(round(t_hist / dt)) + 1
    if abs((n - 1) * dt - t_hist) > 1e-9 * max(1.0, abs(t_hist)):
        raise ValidationError("t_hist must be a multiple of dt")
    return Segment(r, dt, np.tile(value, (n, 1)))


def zero_segment(n_modes: int, r: float, dt: float, t_hist: float) -> Segment:
    return constant_segment(np.zeros(n_modes), r, dt, t_hist)


def segment_to_dict(seg: Segment) -> dict:
    return {
        "r": seg.r,
        "dt": seg.dt,
        "values": seg.values.tolist(),
        "tail_limit": seg.tail_limit.tolist(),
    }


def segment_from_dict(d: dict) -> Segment:
    return Segment(d["r"], d["dt"], d["values"], d.get("tail_limit"))


def delay_measure_to_dict(rho: DelayMeasure) -> dict:
    return {"atoms": [[t, w] for t, w in rho.atoms]}


def delay_measure_from_dict(d: dict) -> DelayMeasure:
    return DelayMeasure(tuple((t, w) for t, w in d["atoms"]))
