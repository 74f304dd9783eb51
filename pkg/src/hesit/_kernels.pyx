# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-example kernels for the dense softmax MLP.

Same contract as ``_kernels_py``. Examples are processed one at a time in a
fixed loop order, so the output does not depend on BLAS threading.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh
from libc.stdint cimport int64_t

cnp.import_array()

DEF IDENTITY = 0
DEF RELU = 1
DEF TANH = 2


cdef inline double _act(double z, int act) noexcept nogil:
    if act == RELU:
        return z if z > 0.0 else 0.0
    if act == TANH:
        return tanh(z)
    return z


cdef inline double _act_deriv(double z, double a, int act) noexcept nogil:
    if act == RELU:
        return 1.0 if z > 0.0 else 0.0
    if act == TANH:
        return 1.0 - a * a
    return 1.0


cdef void _forward_one(const double[::1] params, const int64_t[::1] sizes,
                       Py_ssize_t n_layers, int act, const double[:, ::1] X,
                       Py_ssize_t i, double[::1] pre, double[::1] acts,
                       const int64_t[::1] act_off) noexcept nogil:
    cdef Py_ssize_t l, j, k, n_in, n_out, w_off = 0, a_in, a_out
    cdef double s
    for k in range(sizes[0]):
        acts[k] = X[i, k]
    for l in range(n_layers):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        a_in = act_off[l]
        a_out = act_off[l + 1]
        for j in range(n_out):
            s = params[w_off + n_out * n_in + j]
            for k in range(n_in):
                s = s + params[w_off + j * n_in + k] * acts[a_in + k]
            pre[a_out + j] = s
            if l == n_layers - 1:
                acts[a_out + j] = s
            else:
                acts[a_out + j] = _act(s, act)
        w_off += n_out * n_in + n_out


cdef double _xent_one(double[::1] acts, Py_ssize_t off, Py_ssize_t C,
                      int64_t label, double[::1] probs) noexcept nogil:
    cdef Py_ssize_t c
    cdef double m = acts[off], s = 0.0, lse
    for c in range(1, C):
        if acts[off + c] > m:
            m = acts[off + c]
    for c in range(C):
        probs[c] = exp(acts[off + c] - m)
        s = s + probs[c]
    lse = log(s)
    for c in range(C):
        probs[c] = probs[c] / s
    return lse - (acts[off + label] - m)


def _offsets(const int64_t[::1] sizes):
    n = sizes.shape[0]
    act_off = np.zeros(n + 1, dtype=np.int64)
    w_off = np.zeros(n, dtype=np.int64)
    for l in range(n):
        act_off[l + 1] = act_off[l] + sizes[l]
    for l in range(n - 1):
        w_off[l + 1] = w_off[l] + sizes[l + 1] * sizes[l] + sizes[l + 1]
    return act_off, w_off


def logits(const double[::1] params, sizes, int act, const double[:, ::1] X):
    cdef const int64_t[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef Py_ssize_t n_layers = sz.shape[0] - 1, n = X.shape[0], i, c
    act_off_np, _ = _offsets(sz)
    cdef const int64_t[::1] act_off = act_off_np
    cdef Py_ssize_t total = act_off[n_layers + 1], C = sz[n_layers]
    cdef double[::1] pre = np.empty(total)
    cdef double[::1] acts = np.empty(total)
    out_np = np.empty((n, C))
    cdef double[:, ::1] out = out_np
    with nogil:
        for i in range(n):
            _forward_one(params, sz, n_layers, act, X, i, pre, acts, act_off)
            for c in range(C):
                out[i, c] = acts[act_off[n_layers] + c]
    return out_np


def example_losses(const double[::1] params, sizes, int act,
                   const double[:, ::1] X, const int64_t[::1] y):
    cdef const int64_t[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef Py_ssize_t n_layers = sz.shape[0] - 1, n = X.shape[0], i
    act_off_np, _ = _offsets(sz)
    cdef const int64_t[::1] act_off = act_off_np
    cdef Py_ssize_t total = act_off[n_layers + 1], C = sz[n_layers]
    cdef double[::1] pre = np.empty(total)
    cdef double[::1] acts = np.empty(total)
    cdef double[::1] probs = np.empty(C)
    losses_np = np.empty(n)
    cdef double[::1] losses = losses_np
    with nogil:
        for i in range(n):
            _forward_one(params, sz, n_layers, act, X, i, pre, acts, act_off)
            losses[i] = _xent_one(acts, act_off[n_layers], C, y[i], probs)
    return losses_np


def example_grads(const double[::1] params, sizes, int act,
                  const double[:, ::1] X, const int64_t[::1] y):
    """Per-example losses and the ``(B, P)`` matrix of per-example gradients."""
    cdef const int64_t[::1] sz = np.ascontiguousarray(sizes, dtype=np.int64)
    cdef Py_ssize_t n_layers = sz.shape[0] - 1, n = X.shape[0], P = params.shape[0]
    act_off_np, w_off_np = _offsets(sz)
    cdef const int64_t[::1] act_off = act_off_np
    cdef const int64_t[::1] w_off = w_off_np
    cdef Py_ssize_t total = act_off[n_layers + 1], C = sz[n_layers]
    cdef Py_ssize_t width = 0, l, i, j, k, n_in, n_out, base
    for l in range(n_layers + 1):
        if sz[l] > width:
            width = sz[l]
    cdef double[::1] pre = np.empty(total)
    cdef double[::1] acts = np.empty(total)
    cdef double[::1] delta = np.empty(width)
    cdef double[::1] delta_prev = np.empty(width)
    cdef double s
    losses_np = np.empty(n)
    G_np = np.empty((n, P))
    cdef double[::1] losses = losses_np
    cdef double[:, ::1] G = G_np
    with nogil:
        for i in range(n):
            _forward_one(params, sz, n_layers, act, X, i, pre, acts, act_off)
            losses[i] = _xent_one(acts, act_off[n_layers], C, y[i], delta)
            delta[y[i]] -= 1.0
            for l in range(n_layers - 1, -1, -1):
                n_in = sz[l]
                n_out = sz[l + 1]
                base = w_off[l]
                for j in range(n_out):
                    for k in range(n_in):
                        G[i, base + j * n_in + k] = delta[j] * acts[act_off[l] + k]
                    G[i, base + n_out * n_in + j] = delta[j]
                if l > 0:
                    for k in range(n_in):
                        s = 0.0
                        for j in range(n_out):
                            s = s + delta[j] * params[base + j * n_in + k]
                        delta_prev[k] = s * _act_deriv(pre[act_off[l] + k], acts[act_off[l] + k], act)
                    for k in range(n_in):
                        delta[k] = delta_prev[k]
    return losses_np, G_np
