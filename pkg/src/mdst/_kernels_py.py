"""Pure-numpy implementations of the hot loops.

These are the reference semantics for the compiled ``_kernels`` extension;
both backends must agree bit-for-bit (tests/test_kernels.py).
"""
import numpy as np

SURROGATE_SIGMOID = 0
SURROGATE_ATAN = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def surrogate_value(x, alpha, kind):
    if kind == SURROGATE_SIGMOID:
        return _sigmoid(alpha * x)
    return 0.5 + np.arctan(0.5 * np.pi * alpha * x) / np.pi


def surrogate_grad(x, alpha, kind):
    if kind == SURROGATE_SIGMOID:
        s = _sigmoid(alpha * x)
        return alpha * s * (1.0 - s)
    z = 0.5 * np.pi * alpha * x
    return 0.5 * alpha / (1.0 + z * z)


def lif_forward(current, theta, decay, gain, v_reset, v0, soft, alpha, kind):
    """Scan a LIF population over the leading time axis.

    current: (T, B, M); theta: (T, B); v0: (B, M).
    Returns spikes (T, B, M), pre-reset potentials (T, B, M), final v (B, M).
    """
    T = current.shape[0]
    spikes = np.empty_like(current)
    upre = np.empty_like(current)
    v = v0.copy()
    for t in range(T):
        u = decay * v + gain * current[t]
        x = u - theta[t][:, None]
        if soft:
            s = surrogate_value(x, alpha, kind)
        else:
            s = (x >= 0.0).astype(np.float64)
        v = u * (1.0 - s) + v_reset * s
        spikes[t] = s
        upre[t] = u
    return spikes, upre, v


def lif_backward(grad_spikes, grad_vlast, upre, spikes, theta, decay, gain, v_reset, alpha, kind):
    """Backpropagate through :func:`lif_forward`, surrogate slope in place of the step.

    Returns grads w.r.t. current (T, B, M), theta (T, B) and v0 (B, M).
    """
    T = grad_spikes.shape[0]
    g_cur = np.empty_like(grad_spikes)
    g_theta = np.empty(theta.shape, dtype=np.float64)
    gv = grad_vlast.copy()
    for t in range(T - 1, -1, -1):
        u = upre[t]
        s = spikes[t]
        sg = surrogate_grad(u - theta[t][:, None], alpha, kind)
        gs = grad_spikes[t]
        du = gs * sg + gv * ((1.0 - s) + (v_reset - u) * sg)
        g_cur[t] = gain * du
        g_theta[t] = -(sg * (gs + gv * (v_reset - u))).sum(axis=1)
        gv = decay * du
    return g_cur, g_theta, gv


def egm_emit(log_frames, threshold):
    """Emit contrast events from a (F, P) sequence of log intensities.

    Returns (t, pixel, polarity) int64 arrays ordered by (t, pixel) and the
    per-frame reference log intensity, shape (F, P).
    """
    F, P = log_frames.shape
    ref = log_frames[0].copy()
    refs = np.empty_like(log_frames)
    refs[0] = ref
    ts, pix, pol = [], [], []
    for t in range(1, F):
        cur = log_frames[t]
        frame_pix, frame_pol = [], []
        while True:
            d = cur - ref
            hit = np.flatnonzero(np.abs(d) >= threshold)
            if hit.size == 0:
                break
            p = np.where(d[hit] > 0.0, 1, -1)
            ref[hit] += p * threshold
            frame_pix.append(hit)
            frame_pol.append(p)
        if frame_pix:
            fp = np.concatenate(frame_pix)
            fq = np.concatenate(frame_pol)
            order = np.argsort(fp, kind="stable")
            pix.append(fp[order])
            pol.append(fq[order])
            ts.append(np.full(fp.size, t, dtype=np.int64))
        refs[t] = ref
    if not ts:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy(), refs
    return (np.concatenate(ts), np.concatenate(pix).astype(np.int64),
            np.concatenate(pol).astype(np.int64), refs)
