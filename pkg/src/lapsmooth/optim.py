"""
SGD-family steps with optional clipping, Gaussian noise and Laplacian
smoothing.

Every private step follows the same order: clip each per-example gradient,
average, add one spherical Gaussian draw, then smooth with A_sigma^{-1}.
Because noise is drawn before smoothing, the random stream consumed is the
same for every sigma, and sigma = 0 reproduces the unsmoothed step exactly.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math
from typing import Optional

import numpy as np

from .circulant import SOLVERS, SmoothingOperator, inverse_apply
from .errors import ConfigError, DimensionError
from .models import clip_rows
from .privacy import RdpLedger

__all__ = [
    'KINDS',
    'Constant',
    'InverseT',
    'StepDecay',
    'schedule_from_dict',
    'AdamParams',
    'OptimizerConfig',
    'OptimizerState',
    'init_state',
    'clip',
    'sample_minibatch',
    'step',
    'step_sgd',
    'step_lssgd',
    'step_dpsgd',
    'step_dplssgd',
    'step_adam',
    'step_dpadam',
    'step_dplsadam',
]

KINDS = ('sgd', 'lssgd', 'dpsgd', 'dplssgd', 'dpadam', 'dplsadam')
_SMOOTHED = {'lssgd', 'dplssgd', 'dplsadam'}
_PRIVATE = {'dpsgd', 'dplssgd', 'dpadam', 'dplsadam'}
_ADAM = {'dpadam', 'dplsadam'}


# ----------------------------------------------------------------------------
# learning-rate schedules; t starts at 1
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    lr: float

    def __call__(self, t):
        return self.lr

    def to_dict(self):
        return {'kind': 'constant', 'lr': self.lr}


@dataclass(frozen=True)
class InverseT:
    a: float = 1.0

    def __call__(self, t):
        return self.a / t

    def to_dict(self):
        return {'kind': 'inverse_t', 'a': self.a}


@dataclass(frozen=True)
class StepDecay:
    """lr before `milestone`, lr / factor from step `milestone` on."""

    lr: float
    factor: float = 10.0
    milestone: int = 10000

    def __call__(self, t):
        return self.lr if t < self.milestone else self.lr / self.factor

    def to_dict(self):
        return {'kind': 'step_decay', 'lr': self.lr, 'factor': self.factor,
                'milestone': self.milestone}


_SCHEDULES = {'constant': Constant, 'inverse_t': InverseT, 'step_decay': StepDecay}


def schedule_from_dict(spec):
    spec = dict(spec)
    kind = spec.pop('kind', None)
    if kind not in _SCHEDULES:
        raise ConfigError(f'unknown schedule kind {kind!r}')
    try:
        return _SCHEDULES[kind](**spec)
    except TypeError as exc:
        raise ConfigError(f'bad {kind} schedule: {exc}') from exc


# ----------------------------------------------------------------------------
# configuration and state
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class OptimizerConfig:
    """What to run. nu_sq is normally filled in by calibration.

    sigma = 0 is accepted for smoothed kinds and reduces them exactly to
    their unsmoothed counterparts. A private kind with nu_sq = 0 can only
    step when the caller supplies the noise vector explicitly.
    """

    kind: str = 'sgd'
    sigma: float = 0.0
    clip_norm: Optional[float] = None
    nu_sq: float = 0.0
    schedule: object = field(default_factory=lambda: Constant(0.1))
    batch_size: int = 1
    adam: Optional[AdamParams] = None
    ls_method: str = 'thomas_sm'

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f'unknown optimizer kind {self.kind!r}; choose from {KINDS}')
        if self.sigma < 0:
            raise ConfigError('sigma must be nonnegative')
        if self.nu_sq < 0:
            raise ConfigError('nu_sq must be nonnegative')
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError('clip_norm must be positive')
        if self.private and self.clip_norm is None:
            raise ConfigError(f'{self.kind} requires clip_norm')
        if self.batch_size < 1:
            raise ConfigError('batch_size must be positive')
        if self.ls_method not in SOLVERS:
            raise ConfigError(f'unknown smoothing solver {self.ls_method!r}')
        if self.kind in _ADAM and self.adam is None:
            object.__setattr__(self, 'adam', AdamParams())

    @property
    def private(self):
        return self.kind in _PRIVATE

    @property
    def smoothed(self):
        return self.kind in _SMOOTHED

    @property
    def uses_adam(self):
        return self.kind in _ADAM

    def to_dict(self):
        return {
            'kind': self.kind,
            'sigma': self.sigma,
            'clip_norm': self.clip_norm,
            'nu_sq': self.nu_sq,
            'schedule': self.schedule.to_dict(),
            'batch_size': self.batch_size,
            'adam': None if self.adam is None else vars(self.adam).copy(),
            'ls_method': self.ls_method,
        }


@dataclass
class OptimizerState:
    w: np.ndarray
    t: int = 1
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    sample_rng: Optional[np.random.Generator] = None
    noise_rng: Optional[np.random.Generator] = None
    ledger: Optional[RdpLedger] = None
    rho_step: float = 0.0


def init_state(w0, seed=0, ledger=None, rho_step=0.0):
    """Fresh state with independent sampling and noise streams from `seed`."""
    sample_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    w = np.array(w0, dtype=np.float64)
    return OptimizerState(
        w=w,
        m=np.zeros_like(w),
        v=np.zeros_like(w),
        sample_rng=np.random.default_rng(sample_ss),
        noise_rng=np.random.default_rng(noise_ss),
        ledger=ledger,
        rho_step=rho_step,
    )


# ----------------------------------------------------------------------------
# building blocks
# ----------------------------------------------------------------------------

def clip(g, C):
    """g / max(1, ||g|| / C); vectors inside the ball come back unchanged."""
    if not C > 0:
        raise ValueError('clip norm must be positive')
    g = np.asarray(g, dtype=np.float64)
    return g / max(1.0, float(np.linalg.norm(g)) / C)


def sample_minibatch(rng, n, b):
    """b distinct indices drawn uniformly from range(n)."""
    if not 1 <= b <= n:
        raise ValueError(f'need 1 <= b <= n, got b={b}, n={n}')
    return rng.choice(n, size=b, replace=False)


@lru_cache(maxsize=32)
def _operator(sigma, dim):
    return SmoothingOperator(sigma, dim)


def _direction(state, config, grads, *, private, smoothed, noise):
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim == 1:
        grads = grads[None]
    d = state.w.size
    if grads.shape[1] != d:
        raise DimensionError(f'gradients have width {grads.shape[1]}, parameters {d}')
    if config.clip_norm is not None:
        grads = clip_rows(grads, config.clip_norm)
    g = grads.mean(axis=0)
    if private:
        if noise is None:
            if not config.nu_sq > 0:
                raise ConfigError(f'{config.kind} needs nu_sq > 0 to draw noise')
            noise = math.sqrt(config.nu_sq) * state.noise_rng.standard_normal(d)
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (d,):
            raise DimensionError(f'noise has shape {noise.shape}, expected ({d},)')
        g = g + noise
        if state.ledger is not None:
            state.ledger.compose(state.rho_step)
    if smoothed:
        g = inverse_apply(_operator(config.sigma, d), g, method=config.ls_method)
    return g


def _sgd(state, config, grads, private, smoothed, noise):
    g = _direction(state, config, grads, private=private, smoothed=smoothed, noise=noise)
    state.w = state.w - config.schedule(state.t) * g
    state.t += 1
    return state


def _adam(state, config, grads, private, smoothed, noise):
    g = _direction(state, config, grads, private=private, smoothed=smoothed, noise=noise)
    hp = config.adam or AdamParams()
    if state.m is None:
        state.m = np.zeros_like(state.w)
        state.v = np.zeros_like(state.w)
    state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * g
    state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * g * g
    m_hat = state.m / (1.0 - hp.beta1 ** state.t)
    v_hat = state.v / (1.0 - hp.beta2 ** state.t)
    state.w = state.w - config.schedule(state.t) * m_hat / (np.sqrt(v_hat) + hp.eps)
    state.t += 1
    return state


def step_sgd(state, config, grads):
    return _sgd(state, config, grads, False, False, None)


def step_lssgd(state, config, grads):
    return _sgd(state, config, grads, False, True, None)


def step_dpsgd(state, config, grads, noise=None):
    return _sgd(state, config, grads, True, False, noise)


def step_dplssgd(state, config, grads, noise=None):
    """w <- w - lr_t * A^{-1}(mean clipped grad + N(0, nu^2 I))."""
    return _sgd(state, config, grads, True, True, noise)


def step_adam(state, config, grads):
    return _adam(state, config, grads, False, False, None)


def step_dpadam(state, config, grads, noise=None):
    return _adam(state, config, grads, True, False, noise)


def step_dplsadam(state, config, grads, noise=None):
    """Adam driven by the smoothed noisy gradient."""
    return _adam(state, config, grads, True, True, noise)


_STEPS = {
    'sgd': step_sgd,
    'lssgd': step_lssgd,
    'dpsgd': step_dpsgd,
    'dplssgd': step_dplssgd,
    'dpadam': step_dpadam,
    'dplsadam': step_dplsadam,
}


def step(state, config, grads, noise=None):
    """Dispatch on config.kind."""
    fn = _STEPS[config.kind]
    if config.private:
        return fn(state, config, grads, noise=noise)
    return fn(state, config, grads)
