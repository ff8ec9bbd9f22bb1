# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernel.

Same contract as _kernel_pure.run_pieces; plain C loops with libm exp, GIL
released across the piece loop.  Agrees with the pure kernel to floating
point accuracy (not bitwise).
"""

from libc.math cimport exp, isfinite

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "compiled"


def run_pieces(const double[:, ::1] lam,
               const double[:, :, ::1] g_lin, const double[:, :, ::1] d_del,
               const double[:, ::1] g_const,
               const double[:, :, ::1] s_const, const double[:, :, ::1] s_head,
               const double[:, :, ::1] s_del,
               const double[::1] atom_units, const double[::1] atom_weights,
               double dt, double[:, ::1] hist,
               const double[::1] piece_dur, const double[::1] piece_frac,
               const cnp.int64_t[::1] piece_reg, const double[:, ::1] piece_dw,
               const cnp.uint8_t[::1] piece_end,
               cnp.int64_t record_stride, double[:, ::1] out_states):
    cdef Py_ssize_t h_pts = hist.shape[0]
    cdef Py_ssize_t n_modes = hist.shape[1]
    cdef Py_ssize_t n_pieces = piece_dur.shape[0]
    cdef Py_ssize_t n_atoms = atom_units.shape[0]
    cdef Py_ssize_t m_w = piece_dw.shape[1]

    buf_arr = np.asarray(hist).copy()
    x_arr = np.asarray(hist)[0].copy()
    xd_arr = np.empty(n_modes)
    b_arr = np.empty(n_modes)
    z_arr = np.empty(n_modes)
    cdef double[:, ::1] buf = buf_arr
    cdef double[::1] x = x_arr
    cdef double[::1] xd = xd_arr
    cdef double[::1] b = b_arr
    cdef double[::1] z = z_arr

    cdef Py_ssize_t p, j, n, m, j0, k
    cdef Py_ssize_t head = 0
    cdef cnp.int64_t g = 0
    cdef Py_ssize_t bad = -1
    cdef double delta, fu, pos, a, w, acc, c0, c1, c2, dwv, e, phi, lv, zz

    for n in range(n_modes):
        out_states[0, n] = x[n]

    with nogil:
        for p in range(n_pieces):
            delta = piece_dur[p]
            k = <Py_ssize_t> piece_reg[p]
            fu = piece_frac[p] / dt

            for n in range(n_modes):
                xd[n] = 0.0
            for j in range(n_atoms):
                pos = atom_units[j] - fu
                if pos <= 0.0:
                    if fu <= 0.0:
                        for n in range(n_modes):
                            xd[n] += atom_weights[j] * x[n]
                    else:
                        a = -pos / fu
                        for n in range(n_modes):
                            xd[n] += atom_weights[j] * (
                                buf[head, n] + a * (x[n] - buf[head, n]))
                else:
                    j0 = <Py_ssize_t> pos
                    w = pos - j0
                    if j0 < h_pts:
                        if w > 0.0 and j0 + 1 < h_pts:
                            for n in range(n_modes):
                                xd[n] += atom_weights[j] * (
                                    (1.0 - w) * buf[(head + j0) % h_pts, n]
                                    + w * buf[(head + j0 + 1) % h_pts, n])
                        else:
                            for n in range(n_modes):
                                xd[n] += atom_weights[j] * (1.0 - w) * buf[
                                    (head + j0) % h_pts, n]

            for n in range(n_modes):
                acc = g_const[k, n]
                for m in range(n_modes):
                    acc += g_lin[k, n, m] * x[m] + d_del[k, n, m] * xd[m]
                b[n] = acc
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                for j in range(m_w):
                    dwv = piece_dw[p, j]
                    c0 += s_const[k, n, j] * dwv
                    c1 += s_head[k, n, j] * dwv
                    c2 += s_del[k, n, j] * dwv
                z[n] = c0 + x[n] * c1 + xd[n] * c2

            for n in range(n_modes):
                lv = lam[k, n]
                zz = lv * delta
                e = exp(-zz)
                if zz < 1e-6:
                    phi = delta * (1.0 - zz / 2.0 + zz * zz / 6.0)
                else:
                    phi = (1.0 - e) / lv
                x[n] = e * x[n] + phi * b[n] + e * z[n]
                if not isfinite(x[n]):
                    bad = p
            if bad >= 0:
                break

            if piece_end[p]:
                head -= 1
                if head < 0:
                    head += h_pts
                for n in range(n_modes):
                    buf[head, n] = x[n]
                g += 1
                if g % record_stride == 0:
                    for n in range(n_modes):
                        out_states[g // record_stride, n] = x[n]

    if bad >= 0:
        return bad
    for j in range(h_pts):
        for n in range(n_modes):
            hist[j, n] = buf[(head + j) % h_pts, n]
    return -1
