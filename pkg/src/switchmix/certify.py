"""Ergodicity certificates built from M-matrix balance conditions.

The drift-dissipation balance matrix couples the switching generator with the
per-regime expansion rates.  When it is a non-singular M-matrix, solving it
against the all-ones vector produces strictly positive per-regime weights; a
small delay load of the weighted feedback coefficients then yields explicit
exponential rates for second moments, pathwise contraction and mixing.  A
finite partition of the regimes by expansion rate extends the same test to
truncations of countable state spaces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import GeneratorMatrix
from .core import DelayMeasure, ValidationError

__all__ = [
    "ModelCoefficients",
    "MMatrixReport",
    "is_nonsingular_m_matrix",
    "dissipation_matrix",
    "delay_condition",
    "RateSolution",
    "solve_decay_rates",
    "Certificate",
    "certify_finite",
    "build_partition",
    "block_generator",
    "Partition",
    "certify_partitioned",
]

_TOL = 1e-10


@dataclass(frozen=True)
class ModelCoefficients:
    """Per-regime structural constants of the equation.

    lambda1: smallest spectral decay rate of the linear part, per regime.
    alpha:   one-sided drift expansion coefficient, per regime (any sign).
    beta:    delay feedback coefficient, per regime (positive).
    lip:     mean-square Lipschitz bound of the noise coefficient.
    r:       history weight exponent.
    rho:     delay measure shared by drift and noise bounds.
    """

    lambda1: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    lip: float
    r: float
    rho: DelayMeasure

    def __post_init__(self):
        lam = np.array(self.lambda1, dtype=np.float64).reshape(-1)
        alp = np.array(self.alpha, dtype=np.float64).reshape(-1)
        bet = np.array(self.beta, dtype=np.float64).reshape(-1)
        if not (lam.shape == alp.shape == bet.shape) or lam.size == 0:
            raise ValidationError("coefficient vectors must share a non-empty shape")
        if not np.isfinite(lam).all() or (lam <= 0.0).any():
            raise ValidationError("lambda1 must be positive and finite")
        if not np.isfinite(alp).all():
            raise ValidationError("alpha must be finite")
        if not np.isfinite(bet).all() or (bet <= 0.0).any():
            raise ValidationError("beta must be positive (clamp exact zeros)")
        if not (self.lip > 0.0) or not math.isfinite(self.lip):
            raise ValidationError("lip must be positive (clamp exact zeros)")
        if not (self.r > 0.0) or not math.isfinite(self.r):
            raise ValidationError("r must be positive and finite")
        for a in (lam, alp, bet):
            a.flags.writeable = False
        object.__setattr__(self, "lambda1", lam)
        object.__setattr__(self, "alpha", alp)
        object.__setattr__(self, "beta", bet)
        object.__setattr__(self, "lip", float(self.lip))
        object.__setattr__(self, "r", float(self.r))

    @property
    def n_states(self) -> int:
        return self.lambda1.size


@dataclass(frozen=True)
class MMatrixReport:
    '''Three independent tests of the non-singular M-matrix property.'''

    passed: bool
    reason: str | None
    z_pattern: bool
    eig_ok: bool | None
    solve_ok: bool | None
    inverse_ok: bool | None
    solution: np.ndarray | None
    min_real_eig: float | None
    min_inverse_entry: float | None

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "reason": self.reason,
            "z_pattern": self.z_pattern,
            "eig_ok": self.eig_ok,
            "solve_ok": self.solve_ok,
            "inverse_ok": self.inverse_ok,
            "solution": None if self.solution is None else self.solution.tolist(),
            "min_real_eig": self.min_real_eig,
            "min_inverse_entry": self.min_inverse_entry,
        }


def is_nonsingular_m_matrix(a, tol: float = _TOL) -> MMatrixReport:
    """Decide whether `a` is a non-singular M-matrix.

    Requires the Z-pattern (off-diagonal <= 0) up front, then runs three
    independent equivalent tests and demands agreement:
      1. every real eigenvalue is positive,
      2. a x = 1 is solvable with x strictly positive,
      3. the inverse exists and is entrywise non-negative.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError("matrix must be square")
    if not np.isfinite(a).all():
        raise ValidationError("matrix entries must be finite")
    n = a.shape[0]
    off = a - np.diag(np.diag(a))
    if off.max(initial=0.0) > 0.0:
        return MMatrixReport(False, "pattern", False,
                             None, None, None, None, None, None)

    eig = np.linalg.eigvals(a)
    scale = np.abs(eig) + 1.0
    real_ev = eig[np.abs(eig.imag) <= 1e-9 * scale].real
    min_real = float(real_ev.min()) if real_ev.size else math.inf
    eig_ok = bool((real_ev > tol).all()) if real_ev.size else True

    try:
        x = np.linalg.solve(a, np.ones(n))
        resid = float(np.abs(a @ x - 1.0).max())
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError:
        return MMatrixReport(False, "singular", True,
                             eig_ok, None, None, None, min_real, None)
    if resid > 1e-6 * max(1.0, float(np.abs(x).max())):
        return MMatrixReport(False, "singular", True,
                             eig_ok, None, None, None, min_real, None)
    solve_ok = bool(x.min() > tol)
    min_inv = float(inv.min())
    inverse_ok = bool(min_inv >= -tol)

    votes = (eig_ok, solve_ok, inverse_ok)
    if all(votes):
        return MMatrixReport(True, None, True, eig_ok, solve_ok, inverse_ok,
                             x, min_real, min_inv)
    reason = "not-m-matrix" if not any(votes) else "criteria-disagree"
    return MMatrixReport(False, reason, True, eig_ok, solve_ok, inverse_ok,
                         x, min_real, min_inv)


def dissipation_matrix(gen: GeneratorMatrix, coeffs: ModelCoefficients) -> np.ndarray:
    '''Balance matrix -(Q + diag(alpha - 2 lambda1 + lip)); an M-matrix exactly
    when switching plus spectral decay dominate drift expansion.'''
    if gen.n_states != coeffs.n_states:
        raise ValidationError("generator and coefficients disagree on state count")
    d = coeffs.alpha - 2.0 * coeffs.lambda1 + coeffs.lip
    return -(gen.q + np.diag(d))


def delay_condition(weights: np.ndarray, coeffs: ModelCoefficients
                    ) -> tuple[bool, float]:
    '''Weighted delay load max_k (beta_k + lip) * w_k; must be < 1 (strictly,
    boundary values within 1e-10 fail).'''
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape != coeffs.beta.shape:
        raise ValidationError("weights and coefficients disagree on state count")
    load = float(np.max((coeffs.beta + coeffs.lip) * w))
    return load < 1.0 - _TOL, load


@dataclass(frozen=True)
class RateSolution:
    '''Certified exponential rates and the slack used to obtain them.'''

    slack: float
    moment_rate: float
    contraction_rate: float
    moment_capped: bool
    contraction_capped: bool


def _largest_root_below(fn, cap: float, tol: float = _TOL) -> tuple[float, bool]:
    '''Largest s in (0, cap) with fn(s) <= 0 for increasing fn, fn(0) < 0;
    bisection to `tol`, capped just inside the open interval.'''
    hi_cap = cap * (1.0 - 1e-9)
    if fn(hi_cap) <= 0.0:
        return hi_cap, True
    lo, hi = 0.0, hi_cap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo, False


def solve_decay_rates(w_max: float, delay_load: float, rho: DelayMeasure,
                      r: float) -> RateSolution:
    """Certified rates from the weight maximum and delay load (< 1 required).

    slack:            (1 - load) / (6 w_max), keeping the rate functions
                      negative at zero.
    moment_rate:      largest s in (0, 2r) with
                      (s + 2 slack) w_max - 1 + (load + slack w_max) M(s) <= 0,
                      M(s) the delay measure's exponential moment.
    contraction_rate: largest s in (0, 2r) with s w_max - 1 + load M(s) <= 0.
    Both found by bisection to 1e-10 and capped just below 2r.
    """
    if not (delay_load < 1.0 - _TOL):
        raise ValidationError("decay rates require delay load < 1")
    if w_max <= 0.0:
        raise ValidationError("weight maximum must be positive")
    slack = (1.0 - delay_load) / (6.0 * w_max)

    def k_moment(s: float) -> float:
        return ((s + 2.0 * slack) * w_max - 1.0
                + (delay_load + slack * w_max) * rho.moment(s))

    def k_contract(s: float) -> float:
        return s * w_max - 1.0 + delay_load * rho.moment(s)

    cap = 2.0 * r
    lam, lam_capped = _largest_root_below(k_moment, cap)
    lam_hat, hat_capped = _largest_root_below(k_contract, cap)
    return RateSolution(slack, lam, lam_hat, lam_capped, hat_capped)


@dataclass(frozen=True)
class Certificate:
    '''Full outcome of a certification run.'''

    passed: bool
    reason: str | None
    balance_matrix: np.ndarray
    m_matrix: MMatrixReport
    weights: np.ndarray | None
    delay_load: float | None
    rates: RateSolution | None
    coupling_rate: float | None
    mixing_rate: float | None
    verdicts: dict

    @property
    def weight_max(self) -> float | None:
        return None if self.weights is None else float(self.weights.max())

    def to_dict(self) -> dict:
        rates = None
        if self.rates is not None:
            rates = {
                "slack": self.rates.slack,
                "moment_rate": self.rates.moment_rate,
                "contraction_rate": self.rates.contraction_rate,
                "moment_capped": self.rates.moment_capped,
                "contraction_capped": self.rates.contraction_capped,
            }
        return {
            "passed": self.passed,
            "reason": self.reason,
            "balance_matrix": self.balance_matrix.tolist(),
            "m_matrix": self.m_matrix.to_dict(),
            "weights": None if self.weights is None else self.weights.tolist(),
            "delay_load": self.delay_load,
            "rates": rates,
            "coupling_rate": self.coupling_rate,
            "mixing_rate": self.mixing_rate,
            "verdicts": dict(self.verdicts),
        }


def _finish_certificate(balance, mrep, weights, coeffs, coupling_rate, verdicts):
    '''Shared tail of the finite and partitioned pipelines: delay condition,
    rates, mixing rate.'''
    ok, load = delay_condition(weights, coeffs)
    verdicts["delay_condition"] = ok
    if not ok:
        return Certificate(False, f"delay-condition K={round(load, 12)}",
                           balance, mrep, weights, load, None,
                           coupling_rate, None, verdicts)
    rates = solve_decay_rates(float(weights.max()), load, coeffs.rho, coeffs.r)
    verdicts["rates_positive"] = rates.moment_rate > 0.0 and rates.contraction_rate > 0.0
    if not verdicts["rates_positive"]:
        return Certificate(False, "rates", balance, mrep, weights, load,
                           rates, coupling_rate, None, verdicts)
    mixing = None
    if coupling_rate is not None:
        mixing = 0.25 * min(rates.contraction_rate, coupling_rate)
    return Certificate(True, None, balance, mrep, weights, load, rates,
                       coupling_rate, mixing, verdicts)


def certify_finite(gen: GeneratorMatrix, coeffs: ModelCoefficients,
                   coupling_rate: float | None = None) -> Certificate:
    """Certificate for a finite regime set.

    Builds the balance matrix, requires it to be a non-singular M-matrix,
    solves for the positive weight vector, checks the delay load and derives
    the exponential rates.  `coupling_rate`, when supplied (measured or
    certified separately), fixes the mixing rate min(contraction, coupling)/4.
    """
    balance = dissipation_matrix(gen, coeffs)
    mrep = is_nonsingular_m_matrix(balance)
    verdicts = {"m_matrix": mrep.passed}
    if not mrep.passed:
        return Certificate(False, mrep.reason, balance, mrep, None, None,
                           None, coupling_rate, None, verdicts)
    return _finish_certificate(balance, mrep, mrep.solution, coeffs,
                               coupling_rate, verdicts)


def build_partition(alpha: np.ndarray, boundaries) -> list[np.ndarray]:
    """Group states by expansion coefficient into bands (b[d-1], b[d]].

    boundaries must start at -inf, increase strictly, and end exactly at
    max(alpha); every band must be non-empty.  Returns index arrays per band.
    """
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    b = [float(x) for x in boundaries]
    if len(b) < 2 or not math.isinf(b[0]) or b[0] > 0:
        raise ValidationError("boundaries must start at -inf")
    if any(x >= y for x, y in zip(b[1:], b[2:])) or not all(
            math.isfinite(x) for x in b[1:]):
        raise ValidationError("boundaries must be finite and strictly increasing")
    if abs(b[-1] - float(alpha.max())) > 1e-9:
        raise ValidationError("last boundary must equal the alpha supremum")
    blocks = []
    for d in range(1, len(b)):
        hi = b[d] + (1e-12 if d == len(b) - 1 else 0.0)
        idx = np.nonzero((alpha > b[d - 1]) & (alpha <= hi))[0]
        if idx.size == 0:
            raise ValidationError(f"partition band {d} is empty; drop boundary {b[d]}")
        blocks.append(idx)
    return blocks


def block_generator(gen: GeneratorMatrix, blocks) -> GeneratorMatrix:
    """Conservative band-level generator: worst-case aggregate rates.

    Upward band transitions take the infimum over source states of the total
    rate into the target band, downward ones the supremum; the diagonal
    closes the rows.  This biases the band chain toward higher-expansion
    bands, so certificates on it transfer to the full chain.
    """
    m = len(blocks)
    qf = np.zeros((m, m))
    for k in range(m):
        for l in range(m):
            if l == k:
                continue
            sums = gen.q[np.ix_(blocks[k], blocks[l])].sum(axis=1)
            qf[k, l] = float(sums.min()) if l > k else float(sums.max())
        qf[k, k] = -qf[k].sum()
    return GeneratorMatrix(qf)


@dataclass(frozen=True)
class Partition:
    '''Band construction details accompanying a partitioned certificate.'''

    boundaries: tuple
    blocks: tuple
    band_generator: GeneratorMatrix
    alpha_sup: np.ndarray
    beta_sup: np.ndarray
    lambda1_inf: np.ndarray
    cumulative_matrix: np.ndarray
    balance_matrix: np.ndarray
    weight_increments: np.ndarray | None
    band_weights: np.ndarray | None
    state_weights: np.ndarray | None
    comparison_slack: float | None
    comparison_ok: bool | None

    def to_dict(self) -> dict:
        return {
            "boundaries": [repr(b) if math.isinf(b) else b for b in self.boundaries],
            "blocks": [list(map(int, blk)) for blk in self.blocks],
            "band_generator": self.band_generator.q.tolist(),
            "alpha_sup": self.alpha_sup.tolist(),
            "beta_sup": self.beta_sup.tolist(),
            "lambda1_inf": self.lambda1_inf.tolist(),
            "cumulative_matrix": self.cumulative_matrix.tolist(),
            "balance_matrix": self.balance_matrix.tolist(),
            "weight_increments": None if self.weight_increments is None
            else self.weight_increments.tolist(),
            "band_weights": None if self.band_weights is None
            else self.band_weights.tolist(),
            "state_weights": None if self.state_weights is None
            else self.state_weights.tolist(),
            "comparison_slack": self.comparison_slack,
            "comparison_ok": self.comparison_ok,
        }


def certify_partitioned(gen: GeneratorMatrix, coeffs: ModelCoefficients,
                        boundaries, coupling_rate: float | None = None
                        ) -> tuple[Certificate, Partition]:
    """Certificate through a finite partition of the regimes by expansion rate.

    Bands get worst-case coefficients (sup alpha, sup beta, inf lambda1) and
    the conservative band generator.  The balance matrix is composed with the
    upper-triangular cumulative matrix; solving it gives positive weight
    increments whose suffix sums are the strictly decreasing band weights.
    States inherit their band's weight, and the band-level drift of the
    weights must dominate the state-level one at every state (the comparison
    check).  Rates then follow as in the finite case.
    """
    if gen.n_states != coeffs.n_states:
        raise ValidationError("generator and coefficients disagree on state count")
    blocks = build_partition(coeffs.alpha, boundaries)
    qf = block_generator(gen, blocks)
    m = len(blocks)
    alpha_sup = np.array([coeffs.alpha[blk].max() for blk in blocks])
    beta_sup = np.array([coeffs.beta[blk].max() for blk in blocks])
    lam_inf = np.array([coeffs.lambda1[blk].min() for blk in blocks])
    cumulative = np.triu(np.ones((m, m)))
    d = alpha_sup - 2.0 * lam_inf + coeffs.lip
    balance = -(qf.q + np.diag(d)) @ cumulative

    part_base = dict(
        boundaries=tuple(float(b) for b in boundaries), blocks=tuple(blocks),
        band_generator=qf, alpha_sup=alpha_sup, beta_sup=beta_sup,
        lambda1_inf=lam_inf, cumulative_matrix=cumulative,
        balance_matrix=balance)

    mrep = is_nonsingular_m_matrix(balance)
    verdicts = {"m_matrix": mrep.passed}
    if not mrep.passed:
        cert = Certificate(False, mrep.reason, balance, mrep, None, None,
                           None, coupling_rate, None, verdicts)
        part = Partition(**part_base, weight_increments=None, band_weights=None,
                         state_weights=None, comparison_slack=None,
                         comparison_ok=None)
        return cert, part

    increments = mrep.solution
    band_weights = cumulative @ increments
    decreasing = bool((np.diff(band_weights) < -_TOL).all()) if m > 1 else True
    verdicts["band_weights_decreasing"] = decreasing

    state_weights = np.empty(coeffs.n_states)
    band_of = np.empty(coeffs.n_states, dtype=np.int64)
    for band_idx, blk in enumerate(blocks):
        state_weights[blk] = band_weights[band_idx]
        band_of[blk] = band_idx
    lhs = gen.q @ state_weights
    rhs = (qf.q @ band_weights)[band_of]
    slack = float((lhs - rhs).max())
    comparison_ok = slack <= _TOL
    verdicts["band_comparison"] = comparison_ok

    part = Partition(**part_base, weight_increments=increments,
                     band_weights=band_weights, state_weights=state_weights,
                     comparison_slack=slack, comparison_ok=comparison_ok)

    if not decreasing:
        cert = Certificate(False, "band-weights-not-decreasing", balance, mrep,
                           state_weights, None, None, coupling_rate, None, verdicts)
        return cert, part
    if not comparison_ok:
        cert = Certificate(False, "band-comparison", balance, mrep,
                           state_weights, None, None, coupling_rate, None, verdicts)
        return cert, part

    band_coeffs = ModelCoefficients(lam_inf, alpha_sup, beta_sup,
                                    coeffs.lip, coeffs.r, coeffs.rho)
    cert = _finish_certificate(balance, mrep, band_weights, band_coeffs,
                               coupling_rate, verdicts)
    if cert.passed:
        cert = Certificate(True, None, balance, mrep, state_weights,
                           cert.delay_load, cert.rates, coupling_rate,
                           cert.mixing_rate, verdicts)
    return cert, part
