"""Independent reference implementations used as test oracles.

Nothing here calls into the package: matrices are assembled entry by entry
and gradients come from central differences.
"""

import json
from pathlib import Path

import numpy as np
import pytest

GOLDEN = Path(__file__).parent / 'golden' / 'golden.json'


def dense_smoothing_matrix(sigma, d):
    """A = I - sigma L with periodic wrap, built by explicit loops."""
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] += 1.0 + 2.0 * sigma
        A[i, (i + 1) % d] -= sigma
        A[i, (i - 1) % d] -= sigma
    return A


def dense_forward_difference(d):
    D = np.zeros((d, d))
    for i in range(d):
        D[i, i] -= 1.0
        D[i, (i + 1) % d] += 1.0
    return D


def eigenvalues_by_loop(sigma, d):
    return np.array([1 + 2 * sigma - 2 * sigma * np.cos(2 * np.pi * i / d)
                     for i in range(1, d + 1)])


def central_difference(f, w, h=1e-5):
    w = np.asarray(w, dtype=np.float64)
    g = np.zeros_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture(scope='session')
def golden():
    return json.loads(GOLDEN.read_text())


def oracle_calibration(epsilon, delta, n, b, T, G, mu):
    """Calibration formulas evaluated in 50-digit arithmetic."""
    import mpmath
    with mpmath.workdps(50):
        eps, delta, n, b, T, G, mu = (mpmath.mpf(x) for x in (epsilon, delta, n, b, T, G, mu))
        alpha = mpmath.log(1 / delta) / ((1 - mu) * eps) + 1
        nu_sq = 20 * T * alpha * G ** 2 / (mu * n ** 2 * eps)
        ratio = 5 * b ** 2 * T * alpha / (mu * n ** 2 * eps)
        bound = mpmath.log(mu * n ** 3 * eps / (5 * b ** 3 * T * alpha + mu * b * n ** 2 * eps))
        return {'alpha': float(alpha), 'nu_sq': float(nu_sq),
                'cond_ratio_ok': bool(ratio >= 1.5), 'cond_alpha_ok': bool(alpha <= bound)}


def random_valid_privacy_sets(count, seed=0):
    """Randomized parameter sets for which both calibration conditions hold.

    Rejection sampling over a region where validity is common: tiny batches,
    many steps and a generous budget. Validity is judged by the mpmath oracle.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p = dict(epsilon=float(rng.uniform(2.0, 20.0)),
                 delta=float(10 ** rng.uniform(-4, -1)),
                 n=int(rng.integers(200, 5000)),
                 b=int(rng.integers(1, 4)),
                 T=int(10 ** rng.uniform(5, 7)),
                 G=float(rng.uniform(0.1, 5.0)),
                 mu=float(rng.uniform(0.2, 0.8)))
        o = oracle_calibration(**p)
        if o['cond_ratio_ok'] and o['cond_alpha_ok']:
            out.append(p)
    return out
