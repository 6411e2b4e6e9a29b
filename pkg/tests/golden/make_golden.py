"""Regenerate the frozen reference values in this directory.

Independent of the package: calibration is evaluated in 50-digit mpmath and
the denoising ratios use an explicitly assembled dense matrix. Run once; the
tests assert against the JSON it writes.
"""

import json
import math
from pathlib import Path

import mpmath
import numpy as np

HERE = Path(__file__).parent


def calibration(eps, delta, n, b, T, G, mu):
    mpmath.mp.dps = 50
    eps, delta, n, b, T, G, mu = (mpmath.mpf(x) for x in (eps, delta, n, b, T, G, mu))
    alpha = mpmath.log(1 / delta) / ((1 - mu) * eps) + 1
    nu_sq = 20 * T * alpha * G ** 2 / (mu * n ** 2 * eps)
    ratio = 5 * b ** 2 * T * alpha / (mu * n ** 2 * eps)
    bound = mpmath.log(mu * n ** 3 * eps / (5 * b ** 3 * T * alpha + mu * b * n ** 2 * eps))
    return {
        'alpha': float(alpha), 'nu_sq': float(nu_sq), 'sensitivity': float(2 * G / b),
        'cond_ratio_ok': bool(ratio >= 1.5), 'cond_alpha_ok': bool(alpha <= bound),
    }


def smoothing_matrix(sigma, d):
    A = np.zeros((d, d))
    for i in range(d):
        A[i, i] += 1 + 2 * sigma
        A[i, (i + 1) % d] -= sigma
        A[i, (i - 1) % d] -= sigma
    return A


def denoise_ratio(kind, sigma, seed):
    wave = np.sin(2 * np.pi * np.arange(1, 101) / 100)
    if kind == 'sine1d':
        clean, scale = wave, 0.1
    else:
        clean, scale = np.outer(wave, wave).ravel(), 0.2
    noisy = clean + scale * np.random.default_rng(seed).standard_normal(clean.size)
    if clean.size <= 200:
        smoothed = np.linalg.solve(smoothing_matrix(sigma, clean.size), noisy)
    else:
        # 10^4 x 10^4 dense is 800 MB; use the circulant eigen-decomposition
        # evaluated by an explicit cosine sum instead of any FFT library.
        d = clean.size
        k = np.arange(d)
        lam = 1 + 2 * sigma - 2 * sigma * np.cos(2 * np.pi * k / d)
        # A^{-1} first column c_j = (1/d) sum_k cos(2 pi j k / d) / lam_k
        col = np.array([np.sum(np.cos(2 * np.pi * j * k / d) / lam) for j in range(d)]) / d
        # A^{-1} v = circular convolution of col with v
        smoothed = np.array([np.dot(np.roll(col[::-1], i + 1), noisy) for i in range(d)])
    mse_noisy = float(np.mean((noisy - clean) ** 2))
    mse_smoothed = float(np.mean((smoothed - clean) ** 2))
    return {'mse_noisy': mse_noisy, 'mse_smoothed': mse_smoothed,
            'ratio': mse_smoothed / mse_noisy}


def main():
    steps = 50 * math.ceil(50000 / 128)
    golden = {
        'calibration_toy': {
            'params': dict(epsilon=1.0, delta=1e-3, n=1000, b=10, T=100, G=1.0, mu=0.5),
            **calibration(1.0, 1e-3, 1000, 10, 100, 1.0, 0.5)},
        'calibration_logreg': {
            'params': dict(epsilon=0.2, delta=1e-5, n=50000, b=128, T=steps, G=1.0, mu=0.5),
            **calibration(0.2, 1e-5, 50000, 128, steps, 1.0, 0.5)},
        'calibration_valid': {
            'params': dict(epsilon=10.0, delta=1e-2, n=1000, b=1, T=10 ** 6, G=1.0, mu=0.5),
            **calibration(10.0, 1e-2, 1000, 1, 10 ** 6, 1.0, 0.5)},
        'denoise': {
            f'{kind}/{seed}': denoise_ratio(kind, sigma, seed)
            for kind, sigma in (('sine1d', 10.0), ('sine2d', 100.0))
            for seed in range(5)},
    }
    (HERE / 'golden.json').write_text(json.dumps(golden, indent=2) + '\n')


if __name__ == '__main__':
    main()
