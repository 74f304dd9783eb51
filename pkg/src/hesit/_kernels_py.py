"""Pure numpy implementation of the dense softmax-MLP kernels.

Mirrors ``_kernels.pyx`` call for call. Parameters are one flat float64
buffer; layer ``l`` stores ``W_l`` (``sizes[l+1] x sizes[l]``, row-major)
followed by ``b_l``.
"""
import numpy as np

IDENTITY, RELU, TANH = 0, 1, 2


def _act(z, act):
    if act == RELU:
        return np.maximum(z, 0.0)
    if act == TANH:
        return np.tanh(z)
    return z


def _act_deriv(z, a, act):
    if act == RELU:
        return (z > 0.0).astype(np.float64)
    if act == TANH:
        return 1.0 - a * a
    return np.ones_like(z)


def _layers(params, sizes):
    off = 0
    out = []
    for l in range(len(sizes) - 1):
        n_in, n_out = sizes[l], sizes[l + 1]
        W = params[off:off + n_out * n_in].reshape(n_out, n_in)
        off += n_out * n_in
        b = params[off:off + n_out]
        off += n_out
        out.append((W, b))
    return out


def _forward(params, sizes, act, X):
    layers = _layers(params, sizes)
    acts = [X]
    pres = []
    for l, (W, b) in enumerate(layers):
        z = acts[-1] @ W.T + b
        pres.append(z)
        acts.append(z if l == len(layers) - 1 else _act(z, act))
    return layers, pres, acts


def logits(params, sizes, act, X):
    return _forward(params, sizes, act, X)[2][-1]


def _xent(out, y):
    m = out.max(axis=1, keepdims=True)
    shifted = out - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(len(y)), y]
    probs = np.exp(shifted - lse[:, None])
    return losses, probs


def example_losses(params, sizes, act, X, y):
    return _xent(logits(params, sizes, act, X), y)[0]


def example_grads(params, sizes, act, X, y):
    """Per-example losses and the ``(B, P)`` matrix of per-example gradients."""
    layers, pres, acts = _forward(params, sizes, act, X)
    losses, probs = _xent(acts[-1], y)
    n = X.shape[0]
    G = np.empty((n, params.shape[0]))
    delta = probs
    delta[np.arange(n), y] -= 1.0
    offsets = []
    off = 0
    for W, b in layers:
        offsets.append(off)
        off += W.size + b.size
    for l in range(len(layers) - 1, -1, -1):
        W, b = layers[l]
        off = offsets[l]
        n_out, n_in = W.shape
        G[:, off:off + n_out * n_in] = (delta[:, :, None] * acts[l][:, None, :]).reshape(n, -1)
        G[:, off + n_out * n_in:off + n_out * n_in + n_out] = delta
        if l > 0:
            delta = (delta @ W) * _act_deriv(pres[l - 1], acts[l], act)
    return losses, G
