import math

import numpy as np
import pytest

from lapsmooth.data import Dataset, make_blobs, split_train_val
from lapsmooth.errors import ConfigError, PrivacyConditionError
from lapsmooth.models import LogisticRegression, Quadratic
from lapsmooth.optim import Constant, InverseT, OptimizerConfig
from lapsmooth.privacy import PrivacyTarget
from lapsmooth.training import METRIC_COLUMNS, RunMetrics, run_training, summarize


@pytest.fixture(scope='module')
def blobs():
    data = make_blobs(600, side=6, separation=6.0, seed=3)
    return split_train_val(data, 500, seed=0)


def test_zero_epochs(blobs):
    train, val = blobs
    obj = LogisticRegression(10, train.num_features)
    w0 = np.random.default_rng(0).standard_normal(obj.dim)
    res = run_training(obj, train, OptimizerConfig(kind='sgd', batch_size=10), epochs=0,
                       val=val, w0=w0)
    assert len(res.metrics.rows) == 1 and res.metrics.rows[0].iter == 0
    np.testing.assert_array_equal(res.state.w, w0)


def test_deterministic_csv(blobs, tmp_path):
    train, val = blobs
    obj = LogisticRegression(10, train.num_features)
    cfg = OptimizerConfig(kind='dplssgd', sigma=1.0, clip_norm=1.0, batch_size=10,
                          schedule=InverseT(1.0))
    texts = []
    for k in range(2):
        res = run_training(obj, train, cfg, privacy=PrivacyTarget(1.0, 1e-5), epochs=2, seed=4,
                           val=val, allow_invalid=True)
        texts.append(res.metrics.to_csv(tmp_path / f'r{k}.csv'))
    assert texts[0] == texts[1]
    assert (tmp_path / 'r0.csv').read_bytes() == (tmp_path / 'r1.csv').read_bytes()
    assert texts[0].splitlines()[0] == ','.join(METRIC_COLUMNS)


def test_quadratic_contraction():
    d, eta = 5, 0.3
    data = Dataset(np.zeros((4, d)), np.zeros(4, dtype=int), 1)
    w0 = np.random.default_rng(1).standard_normal(d)
    res = run_training(Quadratic(d), data, OptimizerConfig(kind='sgd', batch_size=4,
                                                           schedule=Constant(eta)),
                       epochs=20, w0=w0)
    losses = res.metrics.column('train_loss')
    assert np.all(np.diff(losses) < 0)
    expect = [(1 - eta) ** (2 * t) * 0.5 * (w0 @ w0) for t in res.metrics.column('iter')]
    np.testing.assert_allclose(losses, expect, rtol=1e-12)


def test_calibration_failure_aborts(blobs):
    train, _ = blobs
    obj = LogisticRegression(10, train.num_features)
    cfg = OptimizerConfig(kind='dpsgd', clip_norm=1.0, batch_size=10)
    with pytest.raises(PrivacyConditionError):
        run_training(obj, train, cfg, privacy=PrivacyTarget(0.2, 1e-5), epochs=1)
    res = run_training(obj, train, cfg, privacy=PrivacyTarget(0.2, 1e-5), epochs=1,
                       allow_invalid=True)
    assert not res.metrics.private and res.calibration is not None
    assert res.config.nu_sq == res.calibration.nu_sq
    assert res.calibration.params.T == 50 and res.calibration.params.G == 1.0


def test_eps_spent_tracks_ledger(blobs):
    train, _ = blobs
    obj = LogisticRegression(10, train.num_features)
    cfg = OptimizerConfig(kind='dplssgd', sigma=2.0, clip_norm=1.0, batch_size=10)
    res = run_training(obj, train, cfg, privacy=PrivacyTarget(1.0, 1e-5), epochs=3,
                       allow_invalid=True)
    eps = res.metrics.column('eps_spent')
    assert np.all(np.diff(eps) > 0)
    # the full schedule spends exactly the target
    assert eps[-1] == pytest.approx(1.0, rel=1e-9)
    assert res.state.ledger.steps == 150


def test_non_private_eps_is_nan(blobs):
    train, _ = blobs
    res = run_training(LogisticRegression(10, train.num_features), train,
                       OptimizerConfig(kind='sgd', batch_size=50), epochs=1)
    assert math.isnan(res.metrics.final.eps_spent)


def test_eval_cadence(blobs):
    train, _ = blobs
    res = run_training(LogisticRegression(10, train.num_features), train,
                       OptimizerConfig(kind='sgd', batch_size=50), epochs=2, eval_every=3)
    assert [r.iter for r in res.metrics.rows] == [0, 3, 6, 9, 12, 15, 18, 20]


def test_privacy_for_non_private_kind(blobs):
    train, _ = blobs
    with pytest.raises(ConfigError):
        run_training(LogisticRegression(10, train.num_features), train,
                     OptimizerConfig(kind='sgd'), privacy=PrivacyTarget(1.0, 1e-5))


def test_batch_larger_than_data():
    data = Dataset(np.zeros((3, 2)), np.zeros(3, dtype=int), 1)
    with pytest.raises(ConfigError):
        run_training(Quadratic(2), data, OptimizerConfig(kind='sgd', batch_size=4))


def test_csv_round_trip_and_summary(blobs, tmp_path):
    train, val = blobs
    runs = [run_training(LogisticRegression(10, train.num_features), train,
                         OptimizerConfig(kind='sgd', batch_size=50), epochs=1, seed=s, val=val)
            for s in range(3)]
    path = tmp_path / 'm.csv'
    runs[0].metrics.to_csv(path)
    back = RunMetrics.from_csv(path)
    assert back.to_csv() == runs[0].metrics.to_csv()
    s = summarize(runs)
    accs = [r.metrics.final.test_acc for r in runs]
    assert s['test_acc']['mean'] == pytest.approx(np.mean(accs))
    assert s['test_acc']['std'] == pytest.approx(np.std(accs, ddof=1))
    assert s['test_acc']['n'] == 3
