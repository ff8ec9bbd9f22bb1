"""Pure numpy integration kernel; reference implementation.

Consumes a flat schedule of constant-regime time pieces (base cells split at
chain jumps) and advances per-mode states with the exponential update
    x+ = e * x + phi * b + e * z,
e the semigroup factor, phi the first exponential-integrator weight, b the
drift at the piece start, z the noise increment image.  History lives in a
ring buffer rolled at base grid times; delay functionals interpolate into it.

The compiled kernel in _speedups.pyx implements the identical contract; the
two agree to floating-point accuracy (not bitwise: vectorised exp differs
from libm in the last ulp).
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"

_PHI_SERIES_CUT = 1e-6


def phi_weight(lam, dt):
    '''First exponential-integrator weight (1 - exp(-lam dt)) / lam, with a
    series branch for small lam dt; vectorised over lam.'''
    lam = np.asarray(lam, dtype=np.float64)
    z = lam * dt
    small = z < _PHI_SERIES_CUT
    out = np.empty_like(lam)
    zs = z[small]
    out[small] = dt * (1.0 - zs / 2.0 + zs * zs / 6.0)
    zl = z[~small]
    out[~small] = (1.0 - np.exp(-zl)) / lam[~small]
    return out


def _delay_value(buf, head, h_pts, x, pos, fu):
    '''History value `pos` grid units behind the last grid point.'''
    if pos <= 0.0:
        h0 = buf[(head) % h_pts]
        if fu <= 0.0:
            return x
        a = -pos / fu
        return h0 + a * (x - h0)
    j0 = int(pos)
    w = pos - j0
    if j0 >= h_pts:
        return 0.0 * x
    v = (1.0 - w) * buf[(head + j0) % h_pts]
    if w > 0.0 and j0 + 1 < h_pts:
        v = v + w * buf[(head + j0 + 1) % h_pts]
    return v


def run_pieces(lam, g_lin, d_del, g_const, s_const, s_head, s_del,
               atom_units, atom_weights, dt, hist,
               piece_dur, piece_frac, piece_reg, piece_dw, piece_end,
               record_stride, out_states):
    '''Advance through the schedule; see module docstring.  Returns -1 or the
    index of the first piece producing a non-finite state.'''
    h_pts, n_modes = hist.shape
    n_pieces = piece_dur.shape[0]
    n_atoms = atom_units.shape[0]

    buf = hist.copy()
    head = 0
    x = buf[0].copy()
    out_states[0] = x
    g = 0

    # overflow on a diverging path is detected and reported, not warned about
    with np.errstate(over="ignore", invalid="ignore"):
        for p in range(n_pieces):
            delta = piece_dur[p]
            k = piece_reg[p]
            fu = piece_frac[p] / dt

            xd = np.zeros(n_modes)
            for j in range(n_atoms):
                pos = atom_units[j] - fu
                xd += atom_weights[j] * _delay_value(buf, head, h_pts, x,
                                                     pos, fu)

            b = g_lin[k] @ x + d_del[k] @ xd + g_const[k]
            dw = piece_dw[p]
            z = s_const[k] @ dw + x * (s_head[k] @ dw) + xd * (s_del[k] @ dw)

            e = np.exp(-lam[k] * delta)
            phi = phi_weight(lam[k], delta)
            x = e * x + phi * b + e * z

            if not np.isfinite(x).all():
                return p

            if piece_end[p]:
                head = (head - 1) % h_pts
                buf[head] = x
                g += 1
                if g % record_stride == 0:
                    out_states[g // record_stride] = x

    for i in range(h_pts):
        hist[i] = buf[(head + i) % h_pts]
    return -1
