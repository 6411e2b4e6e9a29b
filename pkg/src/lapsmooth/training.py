"""
Training loop and run metrics.

A run is fully determined by (objective, data, optimizer config, privacy
target, epochs, seed): minibatch sampling and noise come from independent
streams spawned from the seed, and metrics are written with repr-exact
floats so repeated runs produce byte-identical CSV files.
"""

from dataclasses import dataclass, field, replace
import csv
import io
import json
import logging
import math
from typing import Optional

import numpy as np

from .errors import ConfigError, PrivacyConditionError
from .optim import OptimizerConfig, init_state, sample_minibatch, step
from .privacy import PrivacyParams, RdpLedger, calibrate, step_rdp

__all__ = [
    'METRIC_COLUMNS',
    'MetricRow',
    'RunMetrics',
    'TrainingResult',
    'run_training',
    'summarize',
]

log = logging.getLogger(__name__)

METRIC_COLUMNS = ('iter', 'epoch', 'train_loss', 'val_loss', 'test_acc', 'eps_spent')


@dataclass(frozen=True)
class MetricRow:
    iter: int
    epoch: int
    train_loss: float
    val_loss: float
    test_acc: float
    eps_spent: float


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)
    private: bool = False

    def append(self, row):
        self.rows.append(row)

    @property
    def final(self):
        return self.rows[-1]

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(METRIC_COLUMNS)
        for r in self.rows:
            writer.writerow([r.iter, r.epoch] + [repr(float(getattr(r, c)))
                                                 for c in METRIC_COLUMNS[2:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, 'w', newline='') as fh:
                fh.write(text)
        return text

    def to_json(self):
        return json.dumps({'private': self.private,
                           'rows': [vars(r) for r in self.rows]})

    @classmethod
    def from_csv(cls, path, private=False):
        out = cls(private=private)
        with open(path, newline='') as fh:
            for rec in csv.DictReader(fh):
                out.append(MetricRow(int(rec['iter']), int(rec['epoch']),
                                     *(float(rec[c]) for c in METRIC_COLUMNS[2:])))
        return out


@dataclass
class TrainingResult:
    metrics: RunMetrics
    state: object
    config: OptimizerConfig
    calibration: Optional[object] = None


def _score(objective, w, data):
    if data is None or len(data) == 0:
        return math.nan, math.nan
    loss = objective.full_loss(w, data.features, data.labels)
    acc = objective.accuracy(w, data.features, data.labels) \
        if hasattr(objective, 'accuracy') else math.nan
    return loss, acc


def run_training(objective, train, config, privacy=None, epochs=1, seed=0,
                 val=None, test=None, eval_every=None, allow_invalid=False,
                 w0=None):
    """Run `epochs` passes of ceil(n/b) minibatch steps each.

    With a `privacy` target (PrivacyTarget or anything with epsilon, delta,
    mu) the noise variance is calibrated for T = epochs * ceil(n/b) steps
    with G equal to the clip norm, and written into the config. Failing
    validity conditions raise PrivacyConditionError unless `allow_invalid`,
    in which case the run is marked non-private.

    Metrics are recorded before the first step and every `eval_every`
    steps (default: once per epoch). `test_acc` is measured on `test`, or
    on `val` when no test set is given.
    """
    n, b = len(train), config.batch_size
    if b > n:
        raise ConfigError(f'batch size {b} exceeds training set size {n}')
    steps_per_epoch = math.ceil(n / b)
    T = epochs * steps_per_epoch
    eval_every = eval_every or steps_per_epoch

    calibration = None
    ledger = None
    rho_step = 0.0
    private = False
    if privacy is not None:
        if not config.private:
            raise ConfigError(f'privacy target given for non-private kind {config.kind}')
        params = PrivacyParams(privacy.epsilon, privacy.delta, n, b, max(T, 1),
                               config.clip_norm, privacy.mu)
        calibration = calibrate(params)
        if not calibration.valid:
            msg = '; '.join(calibration.failures())
            if not allow_invalid:
                raise PrivacyConditionError(f'calibration conditions fail: {msg}')
            log.warning('calibration conditions fail (%s); run is NOT labelled private', msg)
        private = calibration.valid
        config = replace(config, nu_sq=calibration.nu_sq)
        ledger = RdpLedger(calibration.alpha)
        rho_step = step_rdp(calibration).rho

    if w0 is None:
        w0 = objective.init_params(np.random.default_rng(np.random.SeedSequence([seed, 1])))
    state = init_state(w0, seed=seed, ledger=ledger, rho_step=rho_step)
    metrics = RunMetrics(private=private)
    eval_set = test if test is not None else val

    def record(it, epoch):
        train_loss = objective.full_loss(state.w, train.features, train.labels)
        val_loss = _score(objective, state.w, val)[0]
        test_acc = _score(objective, state.w, eval_set)[1]
        eps = ledger.epsilon(privacy.delta) if ledger is not None else math.nan
        metrics.append(MetricRow(it, epoch, train_loss, val_loss, test_acc, eps))

    record(0, 0)
    it = 0
    for epoch in range(1, epochs + 1):
        for _ in range(steps_per_epoch):
            idx = sample_minibatch(state.sample_rng, n, b)
            grads = objective.per_example_grads(state.w, train.features[idx], train.labels[idx])
            step(state, config, grads)
            it += 1
            if it % eval_every == 0 and it != T:
                record(it, epoch)
        if it == T and epoch == epochs:
            record(it, epoch)
    return TrainingResult(metrics, state, config, calibration)


def summarize(results, columns=('test_acc', 'train_loss', 'val_loss')):
    """Mean and sample standard deviation of final metrics across runs.

    `results` holds RunMetrics or TrainingResult objects.
    """
    finals = [getattr(r, 'metrics', r).final for r in results]
    out = {}
    for col in columns:
        vals = np.array([getattr(f, col) for f in finals], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[col] = {'mean': float(vals.mean()), 'std': std, 'n': len(vals)}
    return out
