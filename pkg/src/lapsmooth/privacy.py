"""
Renyi-DP accounting and Gaussian noise calibration for private SGD.

The calibration gives, for T steps of subsampled Gaussian noise on the mean
of b clipped per-example gradients out of n, the per-coordinate variance

    nu^2  = 20 T alpha G^2 / (mu n^2 eps)
    alpha = log(1/delta) / ((1 - mu) eps) + 1

valid when nu^2 / Delta^2 = 5 b^2 T alpha / (mu n^2 eps) >= 1.5 and
alpha <= log(mu n^3 eps / (5 b^3 T alpha + mu b n^2 eps)). mu in (0, 1) splits
the budget: each step costs mu*eps/T in RDP and the conversion to
(eps, delta)-DP spends the remaining (1 - mu)*eps.

Smoothing the noisy gradient afterwards is post-processing, so nothing in
this module depends on the smoothing strength. All logarithms are natural.
"""

from dataclasses import asdict, dataclass, field, fields
import math
from typing import Optional, Sequence

from .errors import ConfigError

__all__ = [
    'PrivacyParams',
    'PrivacyTarget',
    'CalibrationResult',
    'SubsampledRdp',
    'RdpLedger',
    'MuSearchResult',
    'RATIO_THRESHOLD',
    'l2_sensitivity_mean_of_clipped',
    'rdp_gaussian',
    'rdp_subsampled_gaussian',
    'compose',
    'rdp_to_dp',
    'calibrate',
    'search_mu',
    'step_rdp',
    'privacy_params_from_dict',
]

RATIO_THRESHOLD = 1.5


@dataclass(frozen=True)
class PrivacyTarget:
    """The (eps, delta) budget and split mu, without run geometry."""

    epsilon: float
    delta: float
    mu: float = 0.5

    def __post_init__(self):
        _check_budget(self.epsilon, self.delta, self.mu)


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    n: int
    b: int
    T: int
    G: float
    mu: float = 0.5

    def __post_init__(self):
        _check_budget(self.epsilon, self.delta, self.mu)
        for name in ('n', 'b', 'T'):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f'{name} must be a positive integer, got {value}')
        if self.b > self.n:
            raise ValueError(f'batch size b={self.b} exceeds n={self.n}')
        if not (self.G > 0 and math.isfinite(self.G)):
            raise ValueError(f'G must be positive, got {self.G}')

    @classmethod
    def for_run(cls, target, n, b, T, G):
        return cls(target.epsilon, target.delta, n, b, T, G, target.mu)


def _check_budget(epsilon, delta, mu):
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValueError(f'epsilon must be positive, got {epsilon}')
    if not 0 < delta < 1:
        raise ValueError(f'delta must lie in (0, 1), got {delta}')
    if not 0 < mu < 1:
        raise ValueError(f'mu must lie in (0, 1), got {mu}')


@dataclass(frozen=True)
class CalibrationResult:
    params: PrivacyParams
    alpha: float
    nu_sq: float
    sensitivity: float
    noise_ratio: float
    alpha_bound: float
    cond_ratio_ok: bool
    cond_alpha_ok: bool

    @property
    def valid(self):
        return self.cond_ratio_ok and self.cond_alpha_ok

    def failures(self):
        out = []
        if not self.cond_ratio_ok:
            out.append(f'noise ratio {self.noise_ratio:.6g} < {RATIO_THRESHOLD}')
        if not self.cond_alpha_ok:
            out.append(f'alpha {self.alpha:.6g} > log bound {self.alpha_bound:.6g}')
        return out

    def to_dict(self):
        """Flat manifest form."""
        p = asdict(self.params)
        return {
            'epsilon': p['epsilon'],
            'delta': p['delta'],
            'n': p['n'],
            'b': p['b'],
            'T': p['T'],
            'G': p['G'],
            'mu': p['mu'],
            'alpha': self.alpha,
            'nu_sq': self.nu_sq,
            'sensitivity': self.sensitivity,
            'cond_ratio_ok': self.cond_ratio_ok,
            'cond_alpha_ok': self.cond_alpha_ok,
        }


def l2_sensitivity_mean_of_clipped(G, b):
    """Sensitivity 2G/b of the mean of b gradients each of norm <= G."""
    if not G > 0:
        raise ValueError(f'G must be positive, got {G}')
    if int(b) != b or b < 1:
        raise ValueError(f'b must be a positive integer, got {b}')
    return 2.0 * G / b


def _check_mechanism(alpha, sensitivity, nu_sq):
    if not alpha > 1:
        raise ValueError(f'RDP order must exceed 1, got {alpha}')
    if not sensitivity > 0:
        raise ValueError(f'sensitivity must be positive, got {sensitivity}')
    if not nu_sq > 0:
        raise ValueError(f'noise variance must be positive, got {nu_sq}')


def rdp_gaussian(alpha, sensitivity, nu_sq):
    """RDP of order alpha for the Gaussian mechanism: alpha Delta^2 / (2 nu^2)."""
    _check_mechanism(alpha, sensitivity, nu_sq)
    return alpha * sensitivity ** 2 / (2.0 * nu_sq)


@dataclass(frozen=True)
class SubsampledRdp:
    rho: float
    valid: bool
    reasons: tuple = ()


def rdp_subsampled_gaussian(alpha, sensitivity, nu_sq, tau):
    """RDP bound 5 tau^2 Delta^2 alpha / nu^2 under sampling without replacement.

    The bound only holds when nu^2/Delta^2 >= 1.5 and
    alpha <= log(1 / (tau (1 + nu^2/Delta^2))). Violations are reported in
    the result rather than raised; rho is returned either way.
    """
    _check_mechanism(alpha, sensitivity, nu_sq)
    if not 0 < tau <= 1:
        raise ValueError(f'sampling rate must lie in (0, 1], got {tau}')
    rho = 5.0 * tau ** 2 * sensitivity ** 2 * alpha / nu_sq
    ratio = nu_sq / sensitivity ** 2
    reasons = []
    if ratio < RATIO_THRESHOLD:
        reasons.append(f'nu^2/Delta^2 = {ratio:.6g} < {RATIO_THRESHOLD}')
    bound = -math.log(tau) - math.log1p(ratio)
    if alpha > bound:
        reasons.append(f'alpha = {alpha:.6g} > log(1/(tau(1+ratio))) = {bound:.6g}')
    return SubsampledRdp(rho, not reasons, tuple(reasons))


@dataclass
class RdpLedger:
    """Running RDP total at a fixed order; owned by a single run."""

    alpha: float
    rho_total: float = 0.0
    steps: int = 0

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f'RDP order must exceed 1, got {self.alpha}')

    def compose(self, rho_step):
        if rho_step < 0:
            raise ValueError(f'RDP increments are nonnegative, got {rho_step}')
        self.rho_total += rho_step
        self.steps += 1
        return self

    def epsilon(self, delta):
        return rdp_to_dp(self.alpha, self.rho_total, delta)


def compose(ledger, rho_step):
    return ledger.compose(rho_step)


def rdp_to_dp(alpha, rho, delta):
    """(alpha, rho)-RDP implies (rho + log(1/delta)/(alpha - 1), delta)-DP."""
    if not alpha > 1:
        raise ValueError(f'RDP order must exceed 1, got {alpha}')
    if not 0 < delta < 1:
        raise ValueError(f'delta must lie in (0, 1), got {delta}')
    if rho < 0:
        raise ValueError(f'rho must be nonnegative, got {rho}')
    return rho + math.log(1.0 / delta) / (alpha - 1.0)


def calibrate(params):
    """Noise variance, RDP order and validity flags for a private run."""
    eps, delta, n, b, T, G, mu = (
        params.epsilon, params.delta, params.n, params.b, params.T, params.G,
        params.mu)
    alpha = math.log(1.0 / delta) / ((1.0 - mu) * eps) + 1.0
    nu_sq = 20.0 * T * alpha * G ** 2 / (mu * n ** 2 * eps)
    ratio = 5.0 * b ** 2 * T * alpha / (mu * n ** 2 * eps)
    # the alpha condition has alpha on both sides; check it by substitution
    alpha_bound = math.log(
        mu * n ** 3 * eps / (5.0 * b ** 3 * T * alpha + mu * b * n ** 2 * eps))
    return CalibrationResult(
        params=params,
        alpha=alpha,
        nu_sq=nu_sq,
        sensitivity=l2_sensitivity_mean_of_clipped(G, b),
        noise_ratio=ratio,
        alpha_bound=alpha_bound,
        cond_ratio_ok=ratio >= RATIO_THRESHOLD,
        cond_alpha_ok=alpha <= alpha_bound,
    )


def step_rdp(calibration):
    """Per-step subsampled RDP at the calibrated noise level."""
    p = calibration.params
    return rdp_subsampled_gaussian(
        calibration.alpha, calibration.sensitivity, calibration.nu_sq, p.b / p.n)


@dataclass(frozen=True)
class MuSearchResult:
    best: Optional[CalibrationResult]
    candidates: tuple = field(default=())

    @property
    def found(self):
        return self.best is not None


def search_mu(epsilon, delta, n, b, T, G, grid: Sequence[float]):
    """Pick the budget split with the smallest valid noise variance."""
    grid = list(grid)
    if not grid:
        raise ValueError('mu grid is empty')
    candidates = tuple(
        calibrate(PrivacyParams(epsilon, delta, n, b, T, G, mu)) for mu in grid)
    valid = [c for c in candidates if c.valid]
    best = min(valid, key=lambda c: c.nu_sq) if valid else None
    return MuSearchResult(best, candidates)


def privacy_params_from_dict(cfg):
    """Build PrivacyParams from a flat mapping; unknown keys are rejected."""
    names = [f.name for f in fields(PrivacyParams)]
    unknown = sorted(set(cfg) - set(names))
    if unknown:
        raise ConfigError(f'unknown privacy config key(s): {", ".join(unknown)}')
    for name in names:
        if name not in cfg and name != 'mu':
            raise ConfigError(f'missing privacy config key: {name!r}')
    try:
        return PrivacyParams(**cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
