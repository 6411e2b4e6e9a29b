"""
Command-line interface.

    lapsmooth constants --sigma 1,2,3 --dim 1000,10000
    lapsmooth calibrate --config privacy.json [--mu-grid 0.1:0.9:0.1] [--allow-invalid]
    lapsmooth denoise --kind sine1d --sigma 10 --seed 0
    lapsmooth train --config run.json --out results/ [--parallel 4]

Exit codes: 0 success, 2 configuration error, 3 privacy-condition failure,
4 data error.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import dataclass, fields, replace
import datetime
import json
import logging
import math
import os
from pathlib import Path
import subprocess
import sys
import time

import numpy as np

from . import __version__
from .circulant import (SOLVERS, SmoothingOperator, beta_closed, beta_direct,
                        gamma_closed, gamma_direct, inverse_apply, zeta)
from .data import (DATA_DIR_ENV, SignalSpec, load_mnist, make_blobs, make_signal,
                   split_train_val, subset)
from .errors import ConfigError, DataFormatError, PrivacyConditionError
from .models import MLP, LogisticRegression
from .optim import KINDS, OptimizerConfig, schedule_from_dict
from .privacy import PrivacyTarget, calibrate, privacy_params_from_dict, search_mu
from .training import run_training, summarize

log = logging.getLogger('lapsmooth')

EXIT_OK, EXIT_CONFIG, EXIT_PRIVACY, EXIT_DATA = 0, 2, 3, 4

CONSTANT_COLUMNS = ('sigma', 'd', 'gamma_closed', 'gamma_direct',
                    'beta_closed', 'beta_direct', 'zeta')


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------

def _parse_list(tokens, cast):
    out = []
    for tok in tokens:
        out.extend(cast(x) for x in str(tok).split(',') if x.strip())
    if not out:
        raise ConfigError('empty list')
    return out


def _parse_int(tok):
    value = float(tok)
    if value != int(value):
        raise ConfigError(f'{tok!r} is not an integer')
    return int(value)


def _parse_grid(spec):
    try:
        lo, hi, step = (float(x) for x in spec.split(':'))
    except ValueError:
        raise ConfigError(f'--mu-grid expects lo:hi:step, got {spec!r}') from None
    if step <= 0 or hi < lo:
        raise ConfigError(f'bad --mu-grid {spec!r}')
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + k * step, 12) for k in range(count)]


def _load_json(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f'cannot read config {path}: {exc}') from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path} is not valid JSON: {exc}') from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f'{path} must hold a JSON object')
    return cfg


def _git_describe():
    try:
        out = subprocess.run(['git', 'describe', '--always', '--dirty'],
                             cwd=Path(__file__).parent, capture_output=True,
                             text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def _fmt(x):
    return repr(float(x))


# ----------------------------------------------------------------------------
# constants
# ----------------------------------------------------------------------------

def constants_table(sigmas, dims):
    rows = []
    for s in sigmas:
        for d in dims:
            rows.append({
                'sigma': s, 'd': d,
                'gamma_closed': gamma_closed(s, d),
                'gamma_direct': gamma_direct(s, d),
                'beta_closed': beta_closed(s, d),
                'beta_direct': beta_direct(s, d),
                'zeta': zeta(s, d),
            })
    return rows


def cmd_constants(args):
    try:
        sigmas = _parse_list(args.sigma, float)
        dims = _parse_list(args.dim, _parse_int)
        rows = constants_table(sigmas, dims)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    writer = csv.writer(sys.stdout, lineterminator='\n')
    writer.writerow(CONSTANT_COLUMNS)
    for r in rows:
        writer.writerow([_fmt(r['sigma']), r['d']] + [_fmt(r[c]) for c in CONSTANT_COLUMNS[2:]])
    return EXIT_OK


# ----------------------------------------------------------------------------
# calibrate
# ----------------------------------------------------------------------------

def cmd_calibrate(args):
    params = privacy_params_from_dict(_load_json(args.config))
    result = calibrate(params)
    report = result.to_dict()
    if args.mu_grid:
        search = search_mu(params.epsilon, params.delta, params.n, params.b,
                           params.T, params.G, _parse_grid(args.mu_grid))
        report['best_mu'] = search.best.params.mu if search.found else None
        report['best_nu_sq'] = search.best.nu_sq if search.found else None
    print(json.dumps(report, indent=2))
    if not result.valid:
        for reason in result.failures():
            print(f'privacy condition failed: {reason}', file=sys.stderr)
        if not args.allow_invalid:
            return EXIT_PRIVACY
    return EXIT_OK


# ----------------------------------------------------------------------------
# denoise
# ----------------------------------------------------------------------------

def denoise(spec, sigma, method='thomas_sm'):
    """(clean, noisy, smoothed, summary) for one signal."""
    clean, noisy = make_signal(spec)
    smoothed = inverse_apply(SmoothingOperator(sigma, clean.size), noisy, method=method)
    mse_noisy = float(np.mean((noisy - clean) ** 2))
    mse_smoothed = float(np.mean((smoothed - clean) ** 2))
    summary = {
        'kind': spec.kind, 'sigma': float(sigma), 'seed': spec.seed,
        'length': clean.size, 'mse_noisy': mse_noisy, 'mse_smoothed': mse_smoothed,
        'ratio': mse_smoothed / mse_noisy if mse_noisy > 0 else math.nan,
    }
    return clean, noisy, smoothed, summary


def cmd_denoise(args):
    try:
        spec = SignalSpec(args.kind, args.size, args.noise_scale, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.sigma < 0:
        raise ConfigError('--sigma must be nonnegative')
    clean, noisy, smoothed, summary = denoise(spec, args.sigma, args.method)
    fh = open(args.out, 'w', newline='') if args.out else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(('index', 'clean', 'noisy', 'smoothed'))
        for i, row in enumerate(zip(clean, noisy, smoothed)):
            writer.writerow([i] + [_fmt(x) for x in row])
    finally:
        if args.out:
            fh.close()
    line = ' '.join(f'{k}={v}' for k, v in summary.items())
    print(line, file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


# ----------------------------------------------------------------------------
# train
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Flat run configuration; field names are the accepted JSON keys."""

    objective: str = 'logreg'
    data: str = 'blobs'
    data_dir: str = None
    n_train: int = 50000
    n_subset: int = None
    split_seed: int = 0
    blob_n_train: int = 10000
    blob_n_val: int = 2000
    blob_n_test: int = 2000
    blob_side: int = 14
    blob_separation: float = 20.0
    blob_seed: int = 1234
    kind: str = 'dplssgd'
    sigma: float = 0.0
    clip_norm: float = 1.0
    schedule: str = 'inverse_t'
    lr: float = 1.0
    lr_factor: float = 10.0
    lr_milestone: int = 10000
    batch_size: int = 128
    epochs: int = 10
    l2: float = 1e-4
    hidden: int = 32
    epsilon: float = None
    delta: float = 1e-5
    mu: float = 0.5
    allow_invalid: bool = False
    ls_method: str = 'thomas_sm'
    eval_every: int = None
    seeds: tuple = (0, 1, 2, 3, 4)

    @classmethod
    def from_dict(cls, cfg):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(cfg) - names)
        if unknown:
            raise ConfigError(f'unknown config key(s): {", ".join(unknown)}')
        cfg = dict(cfg)
        if 'seeds' in cfg:
            seeds = cfg['seeds']
            cfg['seeds'] = tuple(seeds) if isinstance(seeds, list) else (seeds,)
        out = cls(**cfg)
        out.validate()
        return out

    def validate(self):
        if self.objective not in ('logreg', 'mlp'):
            raise ConfigError(f'objective must be logreg or mlp, got {self.objective!r}')
        if self.data not in ('mnist', 'blobs'):
            raise ConfigError(f'data must be mnist or blobs, got {self.data!r}')
        if self.kind not in KINDS:
            raise ConfigError(f'kind must be one of {KINDS}, got {self.kind!r}')
        if self.ls_method not in SOLVERS:
            raise ConfigError(f'ls_method must be one of {SOLVERS}')
        if self.epochs < 0:
            raise ConfigError('epochs must be nonnegative')
        if not self.seeds:
            raise ConfigError('seeds must be nonempty')

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out['seeds'] = list(self.seeds)
        return out

    def optimizer(self):
        if self.schedule == 'inverse_t':
            sched = {'kind': 'inverse_t', 'a': self.lr}
        elif self.schedule == 'constant':
            sched = {'kind': 'constant', 'lr': self.lr}
        elif self.schedule == 'step_decay':
            sched = {'kind': 'step_decay', 'lr': self.lr, 'factor': self.lr_factor,
                     'milestone': self.lr_milestone}
        else:
            raise ConfigError(f'unknown schedule {self.schedule!r}')
        smoothed = self.kind in ('lssgd', 'dplssgd', 'dplsadam')
        return OptimizerConfig(
            kind=self.kind,
            sigma=self.sigma if smoothed else 0.0,
            clip_norm=self.clip_norm,
            schedule=schedule_from_dict(sched),
            batch_size=self.batch_size,
            ls_method=self.ls_method,
        )

    def privacy(self):
        if self.epsilon is None:
            return None
        return PrivacyTarget(self.epsilon, self.delta, self.mu)


def load_datasets(cfg):
    """(train, val, test) for a TrainConfig."""
    if cfg.data == 'mnist':
        full_train, test = load_mnist(cfg.data_dir)
        train, val = split_train_val(full_train, cfg.n_train, seed=cfg.split_seed)
    else:
        total = cfg.blob_n_train + cfg.blob_n_val + cfg.blob_n_test
        full = make_blobs(total, side=cfg.blob_side, separation=cfg.blob_separation,
                          seed=cfg.blob_seed)
        train, rest = split_train_val(full, cfg.blob_n_train, seed=cfg.split_seed)
        val, test = split_train_val(rest, cfg.blob_n_val, seed=cfg.split_seed)
    if cfg.n_subset is not None:
        if cfg.n_subset > len(train):
            raise ConfigError(f'n_subset {cfg.n_subset} exceeds {len(train)} training rows')
        idx = np.random.default_rng(cfg.split_seed).permutation(len(train))[:cfg.n_subset]
        train = subset(train, np.sort(idx), subset=cfg.n_subset)
    return train, val, test


def build_objective(cfg, train):
    if cfg.objective == 'logreg':
        return LogisticRegression(train.num_classes, train.num_features, cfg.l2)
    return MLP(train.num_features, cfg.hidden, train.num_classes, cfg.l2)


def run_one(cfg, seed, out_dir):
    """Train one seed; write its CSV and manifest. Returns the final row and label."""
    started = time.time()
    train, val, test = load_datasets(cfg)
    objective = build_objective(cfg, train)
    result = run_training(objective, train, cfg.optimizer(), privacy=cfg.privacy(),
                          epochs=cfg.epochs, seed=seed, val=val, test=test,
                          eval_every=cfg.eval_every, allow_invalid=cfg.allow_invalid)
    out_dir = Path(out_dir)
    csv_path = out_dir / f'run_seed{seed}.csv'
    result.metrics.to_csv(csv_path)
    single = cfg.to_dict()
    single['seeds'] = [seed]
    manifest = {
        'version': __version__,
        'git': _git_describe(),
        'created': datetime.datetime.now(datetime.timezone.utc).isoformat(),
        'wall_seconds': time.time() - started,
        'seed': seed,
        'config': single,
        'optimizer': result.config.to_dict(),
        'calibration': None if result.calibration is None else result.calibration.to_dict(),
        'private': result.metrics.private,
        'data': {'train': len(train), 'val': len(val), 'test': len(test),
                 'source': train.meta.get('source')},
        'metrics_csv': csv_path.name,
    }
    with open(out_dir / f'manifest_seed{seed}.json', 'w') as fh:
        json.dump(manifest, fh, indent=2)
    return result


def _run_one_final(cfg, seed, out_dir):
    return run_one(cfg, seed, out_dir).metrics


def cmd_train(args):
    raw = _load_json(args.config)
    if 'config' in raw and 'calibration' in raw:
        raw = raw['config']  # re-run from a manifest
    if args.allow_invalid:
        raw = {**raw, 'allow_invalid': True}
    cfg = TrainConfig.from_dict(raw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.data == 'mnist':
        cfg = _resolve_data_dir(cfg)

    if args.parallel and args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = [pool.submit(_run_one_final, cfg, s, out_dir) for s in cfg.seeds]
            all_metrics = [f.result() for f in futures]
    else:
        all_metrics = [_run_one_final(cfg, s, out_dir) for s in cfg.seeds]

    summary = summarize(all_metrics)
    summary['private'] = all(m.private for m in all_metrics)
    summary['seeds'] = list(cfg.seeds)
    with open(out_dir / 'summary.json', 'w') as fh:
        json.dump(summary, fh, indent=2)
    with open(out_dir / 'summary.csv', 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(('metric', 'mean', 'std', 'runs'))
        for key in ('test_acc', 'train_loss', 'val_loss'):
            s = summary[key]
            writer.writerow((key, _fmt(s['mean']), _fmt(s['std']), s['n']))
    acc = summary['test_acc']
    label = '' if summary['private'] else ' [NOT (eps,delta)-DP: calibration conditions failed or no budget]'
    print(f'test_acc {100 * acc["mean"]:.2f} +- {100 * acc["std"]:.2f} '
          f'({acc["n"]} runs){label}')
    return EXIT_OK


def _resolve_data_dir(cfg):
    data_dir = cfg.data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise FileNotFoundError(
            f'no MNIST directory: set data_dir or ${DATA_DIR_ENV}, '
            'or use "data": "blobs" for the synthetic fallback')
    return replace(cfg, data_dir=data_dir)


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog='lapsmooth', description='Laplacian-smoothed differentially private SGD')
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('constants', help='spectral constants gamma, beta, zeta as CSV')
    p.add_argument('--sigma', nargs='+', required=True, help='comma-separated list')
    p.add_argument('--dim', nargs='+', required=True, help='comma-separated list')
    p.set_defaults(func=cmd_constants)

    p = sub.add_parser('calibrate', help='noise calibration for a privacy budget')
    p.add_argument('--config', required=True)
    p.add_argument('--mu-grid', help='lo:hi:step grid for the budget split mu')
    p.add_argument('--allow-invalid', action='store_true')
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser('denoise', help='smooth a noisy sine signal')
    p.add_argument('--kind', choices=('sine1d', 'sine2d'), required=True)
    p.add_argument('--sigma', type=float, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--size', type=int, default=100)
    p.add_argument('--noise-scale', type=float, default=None)
    p.add_argument('--method', choices=SOLVERS, default='thomas_sm')
    p.add_argument('--out', help='CSV path (default: stdout)')
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser('train', help='train one or more seeded runs')
    p.add_argument('--config', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--parallel', type=int, default=1)
    p.add_argument('--allow-invalid', action='store_true')
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f'config error: {exc}', file=sys.stderr)
        return EXIT_CONFIG
    except PrivacyConditionError as exc:
        print(f'privacy condition failure: {exc} (pass --allow-invalid to run '
              'without the DP label)', file=sys.stderr)
        return EXIT_PRIVACY
    except (FileNotFoundError, DataFormatError) as exc:
        print(f'data error: {exc}', file=sys.stderr)
        return EXIT_DATA


if __name__ == '__main__':
    sys.exit(main())
