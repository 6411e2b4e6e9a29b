"""
Periodic Laplacian smoothing operator A = I - sigma * L.

L is the 1-D discrete Laplacian with periodic boundary, so A is a symmetric
circulant tridiagonal matrix with diagonal 1 + 2*sigma and off-diagonals
(including the two wrapped corners) equal to -sigma. Its eigenvalues are

    lambda_i = 1 + 2*sigma - 2*sigma*cos(2*pi*i/d),   i = 1..d

so A is positive definite with condition number 1 + 4*sigma. Applying A^{-1}
to a vector is one backward-Euler step of the heat equation with time step
sigma, which is what makes it a denoiser.

Three interchangeable solvers are provided for A^{-1} v:

    thomas_sm   O(d) tridiagonal sweep plus a Sherman-Morrison correction
                for the corner entries (default)
    fft         diagonalisation by the discrete Fourier transform
    dense       O(d^3) LAPACK solve of the materialised matrix (reference)
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np
from numba import njit

from .errors import DimensionError

__all__ = [
    'SmoothingOperator',
    'SpectralConstants',
    'SOLVERS',
    'DENSE_DIM_CAP',
    'forward_difference',
    'laplacian',
    'forward_difference_matrix',
    'laplacian_matrix',
    'apply',
    'inverse_apply',
    'omega',
    'xi',
    'gamma_direct',
    'beta_direct',
    'zeta',
    'gamma_closed',
    'beta_closed',
    'spectral_constants',
    'energy_decomposition',
]

SOLVERS = ('thomas_sm', 'fft', 'dense')
DENSE_DIM_CAP = 4096


def _check_sigma(sigma):
    sigma = float(sigma)
    if not (sigma >= 0.0 and math.isfinite(sigma)):
        raise ValueError(f'sigma must be a finite nonnegative number, got {sigma}')
    return sigma


def _check_dim(d):
    if int(d) != d or d < 1:
        raise ValueError(f'dimension must be a positive integer, got {d}')
    return int(d)


def _eigenvalues(sigma, d, start):
    i = np.arange(start, start + d)
    return 1.0 + 2.0 * sigma - 2.0 * sigma * np.cos(2.0 * np.pi * i / d)


@dataclass(frozen=True)
class SmoothingOperator:
    """The matrix A = I - sigma * L acting on vectors of length `dim`.

    Immutable; every derived quantity is computed once and cached, so an
    instance can be shared freely between threads after first use.
    """

    sigma: float
    dim: int

    def __post_init__(self):
        object.__setattr__(self, 'sigma', _check_sigma(self.sigma))
        object.__setattr__(self, 'dim', _check_dim(self.dim))

    @cached_property
    def eigenvalues(self):
        """Eigenvalues indexed i = 1..d; the last one is exactly 1."""
        lam = _eigenvalues(self.sigma, self.dim, 1)
        lam[-1] = 1.0
        lam.setflags(write=False)
        return lam

    @cached_property
    def _rfft_eigenvalues(self):
        # frequency k = 0..d//2; k = 0 is the i = d eigenvalue
        lam = _eigenvalues(self.sigma, self.dim, 0)[: self.dim // 2 + 1]
        lam[0] = 1.0
        return lam

    @cached_property
    def _thomas_factors(self):
        return _cyclic_factorize(self.sigma, self.dim)

    @property
    def is_identity(self):
        return self.sigma == 0.0

    def dense(self):
        """Materialise A as a d x d array (entries merged when d <= 2)."""
        return np.eye(self.dim) - self.sigma * laplacian_matrix(self.dim)

    def apply(self, v):
        return apply(self, v)

    def solve(self, v, method='thomas_sm', dense_cap=DENSE_DIM_CAP):
        return inverse_apply(self, v, method=method, dense_cap=dense_cap)

    def constants(self):
        return spectral_constants(self.sigma, self.dim)


def _as_signal(v, dim):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] != dim:
        raise DimensionError(
            f'expected last axis of length {dim}, got shape {v.shape}')
    return v


# ----------------------------------------------------------------------------
# difference operators
# ----------------------------------------------------------------------------

def forward_difference(v):
    """Periodic forward difference (D+ v)_i = v_{i+1} - v_i along the last axis."""
    v = np.asarray(v, dtype=np.float64)
    return np.roll(v, -1, axis=-1) - v


def laplacian(v):
    """Periodic Laplacian L v = v_{i-1} - 2 v_i + v_{i+1}; equals -D+^T D+ v."""
    v = np.asarray(v, dtype=np.float64)
    return np.roll(v, 1, axis=-1) + np.roll(v, -1, axis=-1) - 2.0 * v


def forward_difference_matrix(d):
    d = _check_dim(d)
    D = np.zeros((d, d))
    rows = np.arange(d)
    np.add.at(D, (rows, rows), -1.0)
    np.add.at(D, (rows, (rows + 1) % d), 1.0)
    return D


def laplacian_matrix(d):
    d = _check_dim(d)
    L = np.zeros((d, d))
    rows = np.arange(d)
    np.add.at(L, (rows, rows), -2.0)
    np.add.at(L, (rows, (rows + 1) % d), 1.0)
    np.add.at(L, (rows, (rows - 1) % d), 1.0)
    return L


# ----------------------------------------------------------------------------
# forward and inverse application
# ----------------------------------------------------------------------------

def apply(op, v):
    """Return A v, matrix-free in O(d). Batches along leading axes."""
    v = _as_signal(v, op.dim)
    if op.is_identity:
        return v.copy()
    return v - op.sigma * laplacian(v)


def inverse_apply(op, v, method='thomas_sm', dense_cap=DENSE_DIM_CAP):
    """Return A^{-1} v using one of `SOLVERS`.

    `v` may be a single vector or a stack of vectors along leading axes.
    sigma = 0 short-circuits to a copy of `v` for every method.
    """
    v = _as_signal(v, op.dim)
    if method not in SOLVERS:
        raise ValueError(f'unknown method {method!r}; choose from {SOLVERS}')
    if method == 'dense' and op.dim > dense_cap:
        raise ValueError(
            f'dense solve refused for d={op.dim} > cap {dense_cap}')
    if op.is_identity:
        return v.copy()
    if method == 'fft':
        return _solve_fft(op, v)
    if method == 'dense':
        return _solve_dense(op, v)
    return _solve_thomas_sm(op, v)


def _solve_fft(op, v):
    # pocketfft handles every length, primes included (Bluestein internally)
    spec = np.fft.rfft(v, axis=-1)
    return np.fft.irfft(spec / op._rfft_eigenvalues, n=op.dim, axis=-1)


def _solve_dense(op, v):
    flat = v.reshape(-1, op.dim)
    return np.linalg.solve(op.dense(), flat.T).T.reshape(v.shape)


def _cyclic_factorize(sigma, d):
    """Precompute the Thomas sweep and Sherman-Morrison vector for A.

    A = T + u w^T with u = (g, 0, .., 0, -sigma), w = (1, 0, .., 0, -sigma/g),
    g = -(1 + 2 sigma); T is tridiagonal with its corners removed and two
    diagonal entries adjusted.
    """
    diag = np.full(d, 1.0 + 2.0 * sigma)
    off = -sigma
    g = -diag[0]
    diag[0] -= g
    diag[-1] -= off * off / g
    cprime = np.empty(d)
    inv_denom = np.empty(d)
    inv_denom[0] = 1.0 / diag[0]
    cprime[0] = off * inv_denom[0]
    for i in range(1, d):
        denom = diag[i] - off * cprime[i - 1]
        inv_denom[i] = 1.0 / denom
        cprime[i] = off * inv_denom[i]
    u = np.zeros((1, d))
    u[0, 0] = g
    u[0, -1] = off
    z = _tridiag_sweep(off, inv_denom, cprime, u)[0]
    w_last = off / g
    scale = 1.0 / (1.0 + z[0] + w_last * z[-1])
    return off, inv_denom, cprime, z, w_last, scale


@njit(cache=True)
def _tridiag_sweep(off, inv_denom, cprime, rhs):
    m, n = rhs.shape
    out = np.empty_like(rhs)
    for r in range(m):
        out[r, 0] = rhs[r, 0] * inv_denom[0]
        for i in range(1, n):
            out[r, i] = (rhs[r, i] - off * out[r, i - 1]) * inv_denom[i]
        for i in range(n - 2, -1, -1):
            out[r, i] -= cprime[i] * out[r, i + 1]
    return out


def _solve_thomas_sm(op, v):
    d = op.dim
    flat = np.ascontiguousarray(v.reshape(-1, d))
    if d == 1:
        return v.copy()
    if d == 2:
        # [[a, c], [c, a]] with a = 1 + 2s, c = -2s; det = 1 + 4s
        s = op.sigma
        a, c = 1.0 + 2.0 * s, -2.0 * s
        x0, x1 = flat[:, 0], flat[:, 1]
        out = np.stack([a * x0 - c * x1, a * x1 - c * x0], axis=-1) / (1.0 + 4.0 * s)
        return out.reshape(v.shape)
    off, inv_denom, cprime, z, w_last, scale = op._thomas_factors
    y = _tridiag_sweep(off, inv_denom, cprime, flat)
    coef = (y[:, 0] + w_last * y[:, -1]) * scale
    y -= coef[:, None] * z[None, :]
    return y.reshape(v.shape)


# ----------------------------------------------------------------------------
# spectral constants
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralConstants:
    sigma: float
    dim: int
    gamma: float
    beta: float
    zeta: float
    omega: float
    xi: float


def omega(sigma):
    """(2s + 1 - sqrt(4s + 1)) / (2s), written without cancellation."""
    sigma = _check_sigma(sigma)
    return 2.0 * sigma / (2.0 * sigma + 1.0 + math.sqrt(4.0 * sigma + 1.0))


def xi(sigma):
    sigma = _check_sigma(sigma)
    if sigma == 0.0:
        return -math.inf
    return -math.sqrt(1.0 + 4.0 * sigma) / sigma


def gamma_direct(sigma, d):
    """Mean of 1/lambda_i over the spectrum."""
    sigma, d = _check_sigma(sigma), _check_dim(d)
    return float(np.mean(1.0 / _eigenvalues(sigma, d, 1)))


def beta_direct(sigma, d):
    """Mean of 1/lambda_i^2 over the spectrum."""
    sigma, d = _check_sigma(sigma), _check_dim(d)
    return float(np.mean(_eigenvalues(sigma, d, 1) ** -2))


def zeta(sigma, d):
    """sqrt(mean((1 + 4s)^2 / lambda_i^2)); at least 1."""
    sigma, d = _check_sigma(sigma), _check_dim(d)
    return (1.0 + 4.0 * sigma) * math.sqrt(beta_direct(sigma, d))


def gamma_closed(sigma, d):
    sigma, d = _check_sigma(sigma), _check_dim(d)
    if sigma == 0.0:
        return 1.0
    wd = omega(sigma) ** d
    return (1.0 + wd) / ((1.0 - wd) * math.sqrt(4.0 * sigma + 1.0))


def beta_closed(sigma, d):
    """Closed form of beta_direct.

    Loses relative accuracy as sigma -> 0 (the numerator cancels against
    the sigma^2 xi^3 denominator); use beta_direct for sigma below ~1e-3.
    """
    sigma, d = _check_sigma(sigma), _check_dim(d)
    if sigma == 0.0:
        return 1.0
    w, x = omega(sigma), xi(sigma)
    wd = w ** d
    num = 2.0 * wd * wd * w - x * wd * wd + 2.0 * x * d * wd - 2.0 * w + x
    return num / (sigma ** 2 * x ** 3 * (1.0 - wd) ** 2)


def spectral_constants(sigma, d):
    sigma, d = _check_sigma(sigma), _check_dim(d)
    return SpectralConstants(
        sigma=sigma,
        dim=d,
        gamma=gamma_closed(sigma, d),
        beta=beta_closed(sigma, d) if sigma >= 1e-3 else beta_direct(sigma, d),
        zeta=zeta(sigma, d),
        omega=omega(sigma),
        xi=xi(sigma),
    )


def energy_decomposition(op, dvec):
    """Both sides of ||A d||^2 = ||d||^2 + 2 s ||D+ d||^2 + s^2 ||L d||^2.

    Returns (total, (plain, difference, curvature)) where total is the
    left-hand side computed directly from A d.
    """
    dvec = _as_signal(dvec, op.dim)
    if dvec.ndim != 1:
        raise DimensionError('energy_decomposition takes a single vector')
    s = op.sigma
    total = float(np.sum(apply(op, dvec) ** 2))
    parts = (
        float(np.sum(dvec ** 2)),
        2.0 * s * float(np.sum(forward_difference(dvec) ** 2)),
        s * s * float(np.sum(laplacian(dvec) ** 2)),
    )
    return total, parts
