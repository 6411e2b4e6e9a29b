"""
Differentiable objectives with hand-derived per-example gradients.

Every objective follows the finite-sum form F(w) = (1/n) sum_i f_i(w) and
exposes vectorised per-example gradients, which the private optimizers clip
one row at a time. Regularisation is folded into each f_i so that the full
loss is exactly the mean of the per-example losses.
"""

import math

import numpy as np

from .errors import DimensionError

__all__ = [
    'Objective',
    'LogisticRegression',
    'Quadratic',
    'ToySurface',
    'MLP',
    'Clipped',
    'softmax_loss_grad',
    'toy_surface_eval_grad',
    'estimate_lipschitz',
    'clip_rows',
]


def clip_rows(G, C):
    """Scale each row g of G by 1/max(1, ||g||/C)."""
    G = np.asarray(G, dtype=np.float64)
    norms = np.linalg.norm(G, axis=-1, keepdims=True)
    return G / np.maximum(1.0, norms / C)


class Objective:
    """Finite-sum objective over examples (x_i, y_i).

    Subclasses implement `losses` and `per_example_grads`; both take a batch
    X of shape (m, ...) and labels Y of shape (m,).
    """

    dim = None
    lipschitz_hint = None

    def _check_w(self, w):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.dim,):
            raise DimensionError(f'expected w of shape ({self.dim},), got {w.shape}')
        return w

    def losses(self, w, X, Y):
        raise NotImplementedError

    def per_example_grads(self, w, X, Y):
        raise NotImplementedError

    def loss(self, w, x, y):
        return float(self.losses(w, np.asarray(x)[None], np.asarray([y]))[0])

    def per_example_grad(self, w, x, y):
        return self.per_example_grads(w, np.asarray(x)[None], np.asarray([y]))[0]

    def full_loss(self, w, X, Y):
        return float(np.mean(self.losses(w, X, Y)))

    def full_grad(self, w, X, Y):
        return self.per_example_grads(w, X, Y).mean(axis=0)

    def init_params(self, rng=None):
        return np.zeros(self.dim)


# ----------------------------------------------------------------------------
# multiclass logistic regression
# ----------------------------------------------------------------------------

def _log_softmax(Z):
    Z = Z - Z.max(axis=-1, keepdims=True)
    return Z - np.log(np.exp(Z).sum(axis=-1, keepdims=True))


class LogisticRegression(Objective):
    """Softmax regression with weights W (K x p) flattened row-major.

    A bias is modelled as a constant-one feature column in X, so p counts it.
    """

    def __init__(self, num_classes, num_features, l2_coeff=1e-4):
        if num_classes < 2 or num_features < 1:
            raise ValueError('need at least two classes and one feature')
        self.num_classes = int(num_classes)
        self.num_features = int(num_features)
        self.l2_coeff = float(l2_coeff)
        self.dim = self.num_classes * self.num_features

    def _logits(self, w, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.num_features:
            raise DimensionError(
                f'expected features of width {self.num_features}, got {X.shape}')
        return X @ w.reshape(self.num_classes, self.num_features).T

    def _labels(self, Y):
        Y = np.asarray(Y)
        if Y.size and (Y.min() < 0 or Y.max() >= self.num_classes):
            raise ValueError(f'labels must lie in [0, {self.num_classes})')
        return Y.astype(np.intp)

    def probabilities(self, w, X):
        w = self._check_w(w)
        return np.exp(_log_softmax(self._logits(w, X)))

    def predict(self, w, X):
        w = self._check_w(w)
        return np.argmax(self._logits(w, X), axis=-1)

    def accuracy(self, w, X, Y):
        if len(Y) == 0:
            return math.nan
        return float(np.mean(self.predict(w, X) == np.asarray(Y)))

    def losses(self, w, X, Y):
        w = self._check_w(w)
        Y = self._labels(Y)
        logp = _log_softmax(self._logits(w, X))
        reg = 0.5 * self.l2_coeff * float(w @ w)
        return -logp[np.arange(len(Y)), Y] + reg

    def per_example_grads(self, w, X, Y):
        w = self._check_w(w)
        Y = self._labels(Y)
        X = np.asarray(X, dtype=np.float64)
        P = np.exp(_log_softmax(self._logits(w, X)))
        P[np.arange(len(Y)), Y] -= 1.0
        G = (P[:, :, None] * X[:, None, :]).reshape(len(Y), self.dim)
        if self.l2_coeff:
            G += self.l2_coeff * w
        return G


def softmax_loss_grad(model, w, x, y):
    """Loss and gradient of one example under a LogisticRegression model."""
    return model.loss(w, x, y), model.per_example_grad(w, x, y)


# ----------------------------------------------------------------------------
# quadratic
# ----------------------------------------------------------------------------

class Quadratic(Objective):
    """f_i(w) = ||w - x_i||^2 / 2; with zero data this is ||w||^2 / 2."""

    def __init__(self, dim):
        self.dim = int(dim)

    def losses(self, w, X, Y=None):
        w = self._check_w(w)
        R = w - np.asarray(X, dtype=np.float64)
        return 0.5 * np.sum(R * R, axis=-1)

    def per_example_grads(self, w, X, Y=None):
        w = self._check_w(w)
        return w - np.asarray(X, dtype=np.float64)


# ----------------------------------------------------------------------------
# nonconvex toy surface
# ----------------------------------------------------------------------------

def toy_surface_eval_grad(x, y):
    """Value and gradient of the piecewise surface.

    r = x^2/4 + y^2; f = r on the closed unit level set r <= 1 and
    sin(pi r / 2) outside. f is continuous, but the gradient jumps across
    r = 1 (the outer branch has zero gradient there). Points on the
    boundary use the inner branch.
    """
    r = x * x / 4.0 + y * y
    dr = np.array([x / 2.0, 2.0 * y])
    if r <= 1.0:
        return r, dr
    half_pi = math.pi / 2.0
    return math.sin(half_pi * r), half_pi * math.cos(half_pi * r) * dr


class ToySurface(Objective):
    """The 2-D surface as a data-free objective (X and Y are ignored)."""

    dim = 2

    def losses(self, w, X=None, Y=None):
        w = self._check_w(w)
        m = 1 if X is None else len(X)
        return np.full(m, toy_surface_eval_grad(w[0], w[1])[0])

    def per_example_grads(self, w, X=None, Y=None):
        w = self._check_w(w)
        m = 1 if X is None else len(X)
        return np.tile(toy_surface_eval_grad(w[0], w[1])[1], (m, 1))


# ----------------------------------------------------------------------------
# one-hidden-layer MLP
# ----------------------------------------------------------------------------

class MLP(Objective):
    """tanh hidden layer followed by softmax; parameters packed as
    (W1: H x p, b1: H, W2: K x H, b2: K)."""

    def __init__(self, num_features, num_hidden, num_classes, l2_coeff=0.0):
        if not 1 <= num_hidden <= 64:
            raise ValueError('hidden width must be in [1, 64]')
        self.p, self.h, self.k = int(num_features), int(num_hidden), int(num_classes)
        self.l2_coeff = float(l2_coeff)
        self._sizes = (self.h * self.p, self.h, self.k * self.h, self.k)
        self.dim = sum(self._sizes)

    def unpack(self, w):
        parts = np.split(w, np.cumsum(self._sizes)[:-1])
        return (parts[0].reshape(self.h, self.p), parts[1],
                parts[2].reshape(self.k, self.h), parts[3])

    def init_params(self, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        W1 = rng.standard_normal((self.h, self.p)) / math.sqrt(self.p)
        W2 = rng.standard_normal((self.k, self.h)) / math.sqrt(self.h)
        return np.concatenate([W1.ravel(), np.zeros(self.h), W2.ravel(), np.zeros(self.k)])

    def _forward(self, w, X):
        W1, b1, W2, b2 = self.unpack(w)
        H = np.tanh(np.asarray(X, dtype=np.float64) @ W1.T + b1)
        return H, _log_softmax(H @ W2.T + b2)

    def predict(self, w, X):
        return np.argmax(self._forward(self._check_w(w), X)[1], axis=-1)

    def accuracy(self, w, X, Y):
        if len(Y) == 0:
            return math.nan
        return float(np.mean(self.predict(w, X) == np.asarray(Y)))

    def losses(self, w, X, Y):
        w = self._check_w(w)
        Y = np.asarray(Y, dtype=np.intp)
        _, logp = self._forward(w, X)
        return -logp[np.arange(len(Y)), Y] + 0.5 * self.l2_coeff * float(w @ w)

    def per_example_grads(self, w, X, Y):
        w = self._check_w(w)
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.intp)
        m = len(Y)
        W1, b1, W2, b2 = self.unpack(w)
        H, logp = self._forward(w, X)
        dZ = np.exp(logp)
        dZ[np.arange(m), Y] -= 1.0
        dW2 = dZ[:, :, None] * H[:, None, :]
        dA = (dZ @ W2) * (1.0 - H * H)
        dW1 = dA[:, :, None] * X[:, None, :]
        G = np.concatenate(
            [dW1.reshape(m, -1), dA, dW2.reshape(m, -1), dZ], axis=1)
        if self.l2_coeff:
            G += self.l2_coeff * w
        return G


# ----------------------------------------------------------------------------
# wrappers and diagnostics
# ----------------------------------------------------------------------------

class Clipped(Objective):
    """Per-example gradients of `base` clipped to norm C; losses unchanged."""

    def __init__(self, base, C):
        if not C > 0:
            raise ValueError('clip norm must be positive')
        self.base, self.C = base, float(C)
        self.dim = base.dim
        self.lipschitz_hint = self.C

    def losses(self, w, X, Y):
        return self.base.losses(w, X, Y)

    def per_example_grads(self, w, X, Y):
        return clip_rows(self.base.per_example_grads(w, X, Y), self.C)


def estimate_lipschitz(objective, X, Y, trials=100, radius=1.0, rng=None):
    """Largest per-example gradient norm seen at random points in a w-ball.

    A heuristic lower bound on the true Lipschitz constant G over the ball,
    never a certificate.
    """
    if len(X) == 0:
        raise ValueError('cannot estimate a Lipschitz constant on an empty dataset')
    if trials < 1:
        raise ValueError('trials must be at least 1')
    rng = np.random.default_rng(0) if rng is None else rng
    d = objective.dim
    best = 0.0
    for _ in range(trials):
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        w = direction * radius * rng.random() ** (1.0 / d)
        idx = rng.integers(len(X), size=min(len(X), 32))
        norms = np.linalg.norm(
            objective.per_example_grads(w, np.asarray(X)[idx], np.asarray(Y)[idx]),
            axis=-1)
        best = max(best, float(norms.max()))
    return best
