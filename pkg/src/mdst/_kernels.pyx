# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LIF scan and event emission. Mirrors ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, atan, fabs, M_PI
from libcpp.vector cimport vector

cnp.import_array()

cdef inline double _sig(double x) nogil:
    return 0.5 * (1.0 + tanh(0.5 * x))

cdef inline double _surr(double x, double alpha, int kind) nogil:
    if kind == 0:
        return _sig(alpha * x)
    return 0.5 + atan(0.5 * M_PI * alpha * x) / M_PI

def lif_forward(double[:, :, ::1] current, double[:, ::1] theta, double decay,
                double gain, double v_reset, double[:, ::1] v0, bint soft,
                double alpha, int kind):
    cdef Py_ssize_t T = current.shape[0], B = current.shape[1], M = current.shape[2]
    cdef Py_ssize_t t, b, m
    spikes_a = np.empty((T, B, M), dtype=np.float64)
    upre_a = np.empty((T, B, M), dtype=np.float64)
    v_a = np.array(v0, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] spikes = spikes_a
    cdef double[:, :, ::1] upre = upre_a
    cdef double[:, ::1] v = v_a
    cdef double u, x, s, th
    with nogil:
        for t in range(T):
            for b in range(B):
                th = theta[t, b]
                for m in range(M):
                    u = decay * v[b, m] + gain * current[t, b, m]
                    x = u - th
                    if soft:
                        s = _surr(x, alpha, kind)
                    else:
                        s = 1.0 if x >= 0.0 else 0.0
                    v[b, m] = u * (1.0 - s) + v_reset * s
                    spikes[t, b, m] = s
                    upre[t, b, m] = u
    return spikes_a, upre_a, v_a


def lif_backward(double[:, :, ::1] grad_spikes, double[:, ::1] grad_vlast,
                 double[:, :, ::1] upre, double[:, :, ::1] spikes,
                 double[:, ::1] theta, double decay, double gain, double v_reset,
                 double alpha, int kind):
    cdef Py_ssize_t T = grad_spikes.shape[0], B = grad_spikes.shape[1], M = grad_spikes.shape[2]
    cdef Py_ssize_t t, b, m
    # sigmoid slope is alpha/4 * (1 - tanh^2(alpha x / 2)); numpy's SIMD tanh beats scalar libm
    y_a = np.empty((T, B, M), dtype=np.float64)
    cdef double[:, :, ::1] yv = y_a
    cdef double half = 0.5 * alpha if kind == 0 else 0.5 * M_PI * alpha
    with nogil:
        for t in range(T):
            for b in range(B):
                for m in range(M):
                    yv[t, b, m] = half * (upre[t, b, m] - theta[t, b])
    if kind == 0:
        np.tanh(y_a, out=y_a)
    g_cur_a = np.empty((T, B, M), dtype=np.float64)
    g_theta_a = np.empty((T, B), dtype=np.float64)
    gv_a = np.array(grad_vlast, dtype=np.float64, copy=True)
    cdef double[:, :, ::1] g_cur = g_cur_a
    cdef double[:, ::1] g_theta = g_theta_a
    cdef double[:, ::1] gv = gv_a
    cdef double u, s, sg, gs, du, acc
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                acc = 0.0
                for m in range(M):
                    u = upre[t, b, m]
                    s = spikes[t, b, m]
                    if kind == 0:
                        sg = 0.25 * alpha * (1.0 - yv[t, b, m] * yv[t, b, m])
                    else:
                        sg = 0.5 * alpha / (1.0 + yv[t, b, m] * yv[t, b, m])
                    gs = grad_spikes[t, b, m]
                    du = gs * sg + gv[b, m] * ((1.0 - s) + (v_reset - u) * sg)
                    g_cur[t, b, m] = gain * du
                    acc = acc + sg * (gs + gv[b, m] * (v_reset - u))
                    gv[b, m] = decay * du
                g_theta[t, b] = -acc
    return g_cur_a, g_theta_a, gv_a


def egm_emit(double[:, ::1] log_frames, double threshold):
    cdef Py_ssize_t F = log_frames.shape[0], P = log_frames.shape[1]
    cdef Py_ssize_t t, i
    refs_a = np.empty((F, P), dtype=np.float64)
    cdef double[:, ::1] refs = refs_a
    ref_a = np.array(log_frames[0], dtype=np.float64, copy=True)
    cdef double[::1] ref = ref_a
    cdef vector[long long] ts, pix, pol
    cdef double d, cur
    cdef long long p
    with nogil:
        for i in range(P):
            refs[0, i] = ref[i]
        for t in range(1, F):
            for i in range(P):
                cur = log_frames[t, i]
                d = cur - ref[i]
                while fabs(d) >= threshold:
                    p = 1 if d > 0.0 else -1
                    ref[i] += p * threshold
                    ts.push_back(t)
                    pix.push_back(i)
                    pol.push_back(p)
                    d = cur - ref[i]
                refs[t, i] = ref[i]
    n = ts.size()
    t_out = np.empty(n, dtype=np.int64)
    x_out = np.empty(n, dtype=np.int64)
    p_out = np.empty(n, dtype=np.int64)
    cdef long long[::1] tv = t_out
    cdef long long[::1] xv = x_out
    cdef long long[::1] pv = p_out
    for i in range(<Py_ssize_t>n):
        tv[i] = ts[i]
        xv[i] = pix[i]
        pv[i] = pol[i]
    return t_out, x_out, p_out, refs_a
