"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The backend is chosen at import time from the ``POLYVOX_NUMBA`` environment
variable: ``1``/``on`` forces numba (errors if unavailable), ``0``/``off``
forces the numpy fallback, anything else (default) uses numba when it
imports cleanly. Both paths are deterministic for identical inputs; they may
differ from each other in the last few ulps because accumulation order
differs. ``benchmarks/bench_kernels.py`` compares the two.

Convolutions use the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("POLYVOX_NUMBA", "auto").strip().lower()

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via POLYVOX_NUMBA=0
    numba = None
    _HAVE_NUMBA = False

if _FLAG in ("1", "on", "true", "yes"):
    if not _HAVE_NUMBA:
        raise ImportError("POLYVOX_NUMBA=1 but numba is not importable")
    NUMBA_ENABLED = True
elif _FLAG in ("0", "off", "false", "no"):
    NUMBA_ENABLED = False
else:
    NUMBA_ENABLED = _HAVE_NUMBA


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


# ---------------------------------------------------------------------------
# Grouped 1-D convolution, same padding, cross-correlation.
#
# x_pad: [B, C_in, T + k - 1] (already zero-padded by (k-1)/2 on both ends)
# w:     [C_out, C_in // groups, k]
# out:   [B, C_out, T]
# ---------------------------------------------------------------------------


def _conv1d_forward_np(x_pad, w, bias, groups):
    b, c_in, tp = x_pad.shape
    c_out, c_in_g, k = w.shape
    t = tp - k + 1
    win = np.lib.stride_tricks.sliding_window_view(x_pad, k, axis=2)
    win = win.reshape(b, groups, c_in_g, t, k)
    wg = w.reshape(groups, c_out // groups, c_in_g, k)
    out = np.einsum("bgctk,gock->bgot", win, wg, optimize=True)
    out = out.reshape(b, c_out, t)
    if bias is not None:
        out += bias[None, :, None]
    return np.ascontiguousarray(out)


def _conv1d_backward_np(x_pad, w, gout, groups):
    """Returns (dx_pad, dw, db); dx_pad has the padded shape of x_pad."""
    b, c_in, tp = x_pad.shape
    c_out, c_in_g, k = w.shape
    t = tp - k + 1
    win = np.lib.stride_tricks.sliding_window_view(x_pad, k, axis=2)
    win = win.reshape(b, groups, c_in_g, t, k)
    gg = gout.reshape(b, groups, c_out // groups, t)
    dw = np.einsum("bgot,bgctk->gock", gg, win, optimize=True)
    dw = np.ascontiguousarray(dw.reshape(c_out, c_in_g, k))
    db = gout.sum(axis=(0, 2))
    wg = w.reshape(groups, c_out // groups, c_in_g, k)
    dx_pad = np.zeros_like(x_pad)
    dxg = dx_pad.reshape(b, groups, c_in_g, tp)
    for dk in range(k):
        dxg[:, :, :, dk : dk + t] += np.einsum(
            "bgot,goc->bgct", gg, wg[:, :, :, dk], optimize=True
        )
    return dx_pad, dw, db


def _levenshtein_np(a, b):
    """Unit-cost edit distance between two int sequences."""
    n = b.shape[0]
    if a.shape[0] == 0:
        return int(n)
    if n == 0:
        return int(a.shape[0])
    idx = np.arange(1, n + 1)
    prev = np.arange(n + 1).astype(np.float64)
    for i in range(1, a.shape[0] + 1):
        m = np.minimum(prev[:-1] + (b != a[i - 1]), prev[1:] + 1)
        # cur[j] = min(m[j], cur[j-1] + 1) solved by a prefix-min scan:
        # cur[j] = j + min(i, min_{l<=j}(m[l] - l))
        acc = np.minimum.accumulate(np.concatenate(([float(i)], m - idx)))
        cur = np.empty(n + 1)
        cur[0] = i
        cur[1:] = idx + acc[1:]
        prev = cur
    return int(prev[-1])


def _adam_update_np(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, grad_scale):
    gt = g * grad_scale
    if weight_decay:
        gt = gt + weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * gt
    v *= beta2
    v += (1.0 - beta2) * gt * gt
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


if _HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _conv1d_forward_nb(x_pad, w, bias, groups):  # pragma: no cover - jit
        b, c_in, tp = x_pad.shape
        c_out, c_in_g, k = w.shape
        t = tp - k + 1
        c_out_g = c_out // groups
        out = np.empty((b, c_out, t))
        for bi in range(b):
            for g in range(groups):
                for ol in range(c_out_g):
                    o = g * c_out_g + ol
                    for ti in range(t):
                        acc = bias[o]
                        for cl in range(c_in_g):
                            c = g * c_in_g + cl
                            for dk in range(k):
                                acc += x_pad[bi, c, ti + dk] * w[o, cl, dk]
                        out[bi, o, ti] = acc
        return out

    @numba.njit(cache=True, fastmath=False)
    def _conv1d_backward_nb(x_pad, w, gout, groups):  # pragma: no cover - jit
        b, c_in, tp = x_pad.shape
        c_out, c_in_g, k = w.shape
        t = tp - k + 1
        c_out_g = c_out // groups
        dx_pad = np.zeros_like(x_pad)
        dw = np.zeros_like(w)
        db = np.zeros(c_out)
        for bi in range(b):
            for g in range(groups):
                for ol in range(c_out_g):
                    o = g * c_out_g + ol
                    for ti in range(t):
                        go = gout[bi, o, ti]
                        db[o] += go
                        for cl in range(c_in_g):
                            c = g * c_in_g + cl
                            for dk in range(k):
                                dx_pad[bi, c, ti + dk] += go * w[o, cl, dk]
                                dw[o, cl, dk] += go * x_pad[bi, c, ti + dk]
        return dx_pad, dw, db

    @numba.njit(cache=True)
    def _levenshtein_nb(a, b):  # pragma: no cover - jit
        la, lb = a.shape[0], b.shape[0]
        if la == 0:
            return lb
        if lb == 0:
            return la
        prev = np.arange(lb + 1)
        cur = np.empty(lb + 1, dtype=np.int64)
        for i in range(1, la + 1):
            cur[0] = i
            for j in range(1, lb + 1):
                cost = 0 if a[i - 1] == b[j - 1] else 1
                best = prev[j - 1] + cost
                if prev[j] + 1 < best:
                    best = prev[j] + 1
                if cur[j - 1] + 1 < best:
                    best = cur[j - 1] + 1
                cur[j] = best
            prev, cur = cur, prev
        return prev[lb]

    @numba.njit(cache=True)
    def _adam_update_nb(
        p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, grad_scale
    ):  # pragma: no cover - jit
        bc1 = 1.0 - beta1**t
        bc2 = 1.0 - beta2**t
        for i in range(p.shape[0]):
            gt = g[i] * grad_scale + weight_decay * p[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gt
            v[i] = beta2 * v[i] + (1.0 - beta2) * gt * gt
            p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


if NUMBA_ENABLED:
    conv1d_forward = _conv1d_forward_nb
    conv1d_backward = _conv1d_backward_nb
    _levenshtein_core = _levenshtein_nb

    def adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay, grad_scale):
        _adam_update_nb(
            p.ravel(), g.ravel(), m.ravel(), v.ravel(), t, lr, beta1, beta2, eps,
            weight_decay, grad_scale,
        )

else:
    conv1d_forward = _conv1d_forward_np
    conv1d_backward = _conv1d_backward_np
    _levenshtein_core = _levenshtein_np
    adam_update = _adam_update_np


def levenshtein(a, b) -> int:
    """Edit distance between two sequences of hashable symbols or int arrays."""
    aa = np.asarray(a if not isinstance(a, str) else [ord(ch) for ch in a])
    bb = np.asarray(b if not isinstance(b, str) else [ord(ch) for ch in b])
    if aa.dtype.kind not in "iu" or bb.dtype.kind not in "iu":
        # map arbitrary symbols to int codes
        table = {}
        aa = np.array([table.setdefault(s, len(table)) for s in a], dtype=np.int64)
        bb = np.array([table.setdefault(s, len(table)) for s in b], dtype=np.int64)
    return int(_levenshtein_core(aa.astype(np.int64), bb.astype(np.int64)))
