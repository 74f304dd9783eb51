"""Small exactly-differentiable classifiers.

Parameters are a flat float64 vector. The ridge term lives in the batch
loss only, so per-example gradients are pure data gradients.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .dataset import Dataset, Example, as_dataset

ACTIVATIONS = {"identity": 0, "relu": 1, "tanh": 2}


class DimensionError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Softmax cross-entropy classifier; ``hidden=()`` gives multinomial logistic regression."""

    input_dim: int
    n_classes: int
    hidden: tuple = ()
    activation: str = "identity"
    l2_lambda: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.n_classes < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.l2_lambda >= 0:
            raise ValueError("l2_lambda must be >= 0")

    @property
    def sizes(self):
        return np.array((self.input_dim, *self.hidden, self.n_classes), dtype=np.int64)

    @property
    def n_params(self):
        s = self.sizes
        return int(sum(s[l + 1] * s[l] + s[l + 1] for l in range(len(s) - 1)))

    def layer_slices(self):
        """(weight slice, bias slice, fan_in, fan_out) per layer."""
        s = self.sizes
        off = 0
        out = []
        for l in range(len(s) - 1):
            n_w = int(s[l + 1] * s[l])
            out.append((slice(off, off + n_w), slice(off + n_w, off + n_w + s[l + 1]), int(s[l]), int(s[l + 1])))
            off += n_w + int(s[l + 1])
        return out

    @property
    def weight_mask(self):
        mask = np.zeros(self.n_params, bool)
        for w, _, _, _ in self.layer_slices():
            mask[w] = True
        return mask

    def init(self, rng):
        p = np.zeros(self.n_params)
        for w, _, fan_in, _ in self.layer_slices():
            bound = 1.0 / np.sqrt(fan_in)
            p[w] = rng.uniform(-bound, bound, size=w.stop - w.start)
        return p

    def _code(self):
        return ACTIVATIONS[self.activation] if self.hidden else 0

    def example_losses(self, params, X, y):
        return _backend.kernels.example_losses(params, self.sizes, self._code(), X, y)

    def example_grads(self, params, X, y):
        return _backend.kernels.example_grads(params, self.sizes, self._code(), X, y)

    def logits(self, params, X):
        return _backend.kernels.logits(params, self.sizes, self._code(), X)

    def predict(self, params, X):
        # np.argmax returns the first maximum: ties go to the lowest class index.
        return np.argmax(self.logits(params, X), axis=1)

    def penalty(self, params):
        w = params[self.weight_mask]
        return 0.5 * self.l2_lambda * float(w @ w)

    def penalty_grad(self, params):
        return self.l2_lambda * np.where(self.weight_mask, params, 0.0)


@dataclass(frozen=True)
class QuadraticModel:
    """Test fixture with loss 0.5 (theta - x)^T A (theta - x) per example.

    With ``x = 0`` this is the pure quadratic surrogate; with ``A = I`` and
    1-D features it is mean estimation. Labels are ignored.
    """

    A: np.ndarray = field(default_factory=lambda: np.eye(1))
    l2_lambda: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        object.__setattr__(self, "A", A)

    @property
    def input_dim(self):
        return self.A.shape[0]

    @property
    def n_params(self):
        return self.A.shape[0]

    n_classes = 1

    @property
    def weight_mask(self):
        return np.ones(self.n_params, bool)

    def init(self, rng):
        return np.zeros(self.n_params)

    def example_losses(self, params, X, y):
        r = params[None, :] - X
        return 0.5 * np.einsum("ij,jk,ik->i", r, self.A, r)

    def example_grads(self, params, X, y):
        r = params[None, :] - X
        return 0.5 * np.einsum("ij,jk,ik->i", r, self.A, r), r @ self.A.T

    def predict(self, params, X):
        return np.zeros(len(X), np.int64)

    def penalty(self, params):
        return 0.5 * self.l2_lambda * float(params @ params)

    def penalty_grad(self, params):
        return self.l2_lambda * params


def _check(spec, params, data):
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise DimensionError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    if data.dim != spec.input_dim and len(data):
        raise DimensionError(f"expected {spec.input_dim} features, got {data.dim}")


def init_params(spec, seed):
    return spec.init(np.random.default_rng(seed))


def loss(spec, params, example: Example):
    """Cross-entropy of one example (no ridge term)."""
    data = as_dataset(example)
    _check(spec, params, data)
    return float(spec.example_losses(params, data.X, data.y)[0])


def grad_example(spec, params, example: Example):
    data = as_dataset(example)
    _check(spec, params, data)
    return spec.example_grads(params, data.X, data.y)[1][0]


def example_grads(spec, params, data):
    """Per-example gradients as a ``(len(data), P)`` matrix."""
    data = as_dataset(data)
    _check(spec, params, data)
    return spec.example_grads(params, data.X, data.y)[1]


def batch_loss(spec, params, batch, weights=None):
    data = as_dataset(batch)
    if not len(data):
        raise ValueError("empty batch")
    _check(spec, params, data)
    losses = spec.example_losses(params, data.X, data.y)
    if weights is not None:
        losses = losses * weights
    return float(np.add.reduce(losses) / len(data)) + spec.penalty(params)


def _reduce_grads(spec, params, G, weights):
    if weights is not None:
        G = G * np.asarray(weights)[:, None]
    # axis-0 reduction runs row after row: fixed left-to-right order.
    return np.add.reduce(G, axis=0) / G.shape[0] + spec.penalty_grad(params)


def grad_batch(spec, params, batch, weights=None):
    """Mean per-example gradient plus the ridge gradient.

    ``weights`` optionally scales each example's contribution (used by the
    epsilon-perturbation oracle).
    """
    data = as_dataset(batch)
    if not len(data):
        raise ValueError("empty batch")
    _check(spec, params, data)
    _, G = spec.example_grads(params, data.X, data.y)
    return _reduce_grads(spec, params, G, weights)


def hvp(spec, params, batch, u):
    """Hessian-vector product of the batch loss by central differences of ``grad_batch``."""
    data = as_dataset(batch)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != params.shape:
        raise DimensionError(f"direction has shape {u.shape}, params {params.shape}")
    norm_u = float(np.linalg.norm(u))
    if norm_u == 0.0:
        return np.zeros_like(params)
    h = np.finfo(float).eps ** (1 / 3) * (1.0 + float(np.linalg.norm(params))) / max(norm_u, np.finfo(float).tiny)
    out = (grad_batch(spec, params + h * u, data) - grad_batch(spec, params - h * u, data)) / (2 * h)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("Hessian-vector product is not finite")
    return out


def evaluate(spec, params, dataset: Dataset):
    """Mean example loss (without ridge) and top-1 accuracy."""
    data = as_dataset(dataset)
    if not len(data):
        raise ValueError("empty dataset")
    _check(spec, params, data)
    losses = spec.example_losses(params, data.X, data.y)
    mean_loss = float(np.add.reduce(losses) / len(data))
    if isinstance(spec, QuadraticModel):
        return mean_loss, float("nan")
    acc = float(np.mean(spec.predict(params, data.X) == data.y))
    return mean_loss, acc
