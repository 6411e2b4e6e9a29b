"""
Datasets: MNIST IDX files, train/validation splits, synthetic blobs, and the
sine test signals used to illustrate smoothing.
"""

from dataclasses import dataclass, field
import csv
import gzip
import os
from pathlib import Path
import struct
import warnings

import numpy as np

from .errors import DataFormatError

__all__ = [
    'Dataset',
    'SignalSpec',
    'IDX_DTYPES',
    'read_idx',
    'read_idx_images',
    'read_idx_labels',
    'write_idx',
    'normalize_features',
    'add_bias_column',
    'split_train_val',
    'subset',
    'make_signal',
    'make_blobs',
    'load_mnist',
    'find_mnist',
    'export_csv',
    'MNIST_FILES',
    'DATA_DIR_ENV',
]

DATA_DIR_ENV = 'LAPSMOOTH_DATA_DIR'

# IDX type code -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: np.dtype('>u1'),
    0x09: np.dtype('>i1'),
    0x0B: np.dtype('>i2'),
    0x0C: np.dtype('>i4'),
    0x0D: np.dtype('>f4'),
    0x0E: np.dtype('>f8'),
}
_CODE_FOR_DTYPE = {v.newbyteorder('='): k for k, v in IDX_DTYPES.items()}
_MAX_ELEMENTS = 2 ** 34

MNIST_FILES = {
    'train_images': 'train-images-idx3-ubyte',
    'train_labels': 'train-labels-idx1-ubyte',
    'test_images': 't10k-images-idx3-ubyte',
    'test_labels': 't10k-labels-idx1-ubyte',
}


@dataclass
class Dataset:
    """Features (n x p), integer labels in [0, num_classes), free-form metadata."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError('features must be an n x p matrix')
        if len(self.features) != len(self.labels):
            raise ValueError(
                f'{len(self.features)} feature rows but {len(self.labels)} labels')
        if not np.all(np.isfinite(self.features)):
            raise ValueError('features must be finite')
        if len(self.labels) and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError(f'labels must lie in [0, {self.num_classes})')

    def __len__(self):
        return len(self.labels)

    @property
    def num_features(self):
        return self.features.shape[1]


# ----------------------------------------------------------------------------
# IDX format
# ----------------------------------------------------------------------------

def _open(path):
    path = Path(path)
    if path.suffix == '.gz':
        return gzip.open(path, 'rb')
    return open(path, 'rb')


def read_idx(path):
    """Parse an IDX file into an array of its declared shape.

    Header: two zero bytes, a type code, the number of dimensions, then one
    big-endian uint32 per dimension. Data follows in row-major order.
    """
    with _open(path) as fh:
        raw = fh.read()
    return _parse_idx(raw, str(path))


def _parse_idx(raw, name):
    if len(raw) < 4:
        raise DataFormatError(f'{name}: truncated header ({len(raw)} bytes)')
    zero, code, ndim = struct.unpack('>HBB', raw[:4])
    if zero != 0 or code not in IDX_DTYPES:
        raise DataFormatError(f'{name}: bad magic 0x{raw[:4].hex()}')
    if ndim == 0:
        raise DataFormatError(f'{name}: zero dimensions declared')
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f'{name}: truncated dimension list')
    shape = struct.unpack(f'>{ndim}I', raw[4:header])
    count = 1
    for size in shape:
        count *= size
        if count > _MAX_ELEMENTS:
            raise DataFormatError(f'{name}: dimensions {shape} overflow')
    dtype = IDX_DTYPES[code]
    expected = header + count * dtype.itemsize
    if len(raw) < expected:
        raise DataFormatError(
            f'{name}: truncated data ({len(raw)} bytes, expected {expected})')
    if len(raw) > expected:
        raise DataFormatError(
            f'{name}: {len(raw) - expected} trailing bytes after declared data')
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=header)
    return data.reshape(shape).astype(dtype.newbyteorder('='))


def _read_expecting(path, ndim):
    with _open(path) as fh:
        raw = fh.read()
    magic = 0x800 | ndim
    if len(raw) >= 4 and struct.unpack('>I', raw[:4])[0] != magic:
        raise DataFormatError(
            f'{path}: expected magic 0x{magic:08x}, found 0x{raw[:4].hex()}')
    return _parse_idx(raw, str(path))


def read_idx_images(path):
    """Unsigned-byte 3-D image tensor (magic 0x00000803)."""
    return _read_expecting(path, 3)


def read_idx_labels(path):
    """Unsigned-byte label vector (magic 0x00000801)."""
    return _read_expecting(path, 1)


def write_idx(path, array):
    array = np.asarray(array)
    key = array.dtype.newbyteorder('=')
    if key not in _CODE_FOR_DTYPE:
        raise DataFormatError(f'dtype {array.dtype} has no IDX type code')
    code = _CODE_FOR_DTYPE[key]
    header = struct.pack('>HBB', 0, code, array.ndim)
    header += struct.pack(f'>{array.ndim}I', *array.shape)
    body = np.ascontiguousarray(array, dtype=IDX_DTYPES[code]).tobytes()
    opener = gzip.open if str(path).endswith('.gz') else open
    with opener(path, 'wb') as fh:
        fh.write(header + body)


def find_mnist(data_dir=None):
    """Locate the four MNIST files, plain or gzipped; None when absent."""
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        return None
    root = Path(data_dir)
    found = {}
    for key, stem in MNIST_FILES.items():
        for candidate in (root / stem, root / (stem + '.gz')):
            if candidate.exists():
                found[key] = candidate
                break
        else:
            return None
    return found


def load_mnist(data_dir=None):
    """(train, test) Datasets with pixels scaled to [0, 1] and a bias column."""
    paths = find_mnist(data_dir)
    if paths is None:
        raise FileNotFoundError(
            f'MNIST IDX files not found in {data_dir or "$" + DATA_DIR_ENV}; '
            'download train/t10k images and labels from the MNIST site into '
            'that directory, or use the synthetic blob fallback (data: "blobs")')
    out = []
    for split in ('train', 'test'):
        images = read_idx_images(paths[f'{split}_images'])
        labels = read_idx_labels(paths[f'{split}_labels'])
        X = normalize_features(images.reshape(len(images), -1), lo=0.0, hi=255.0)
        out.append(Dataset(add_bias_column(X), labels, 10, {'source': 'mnist', 'split': split}))
    return tuple(out)


# ----------------------------------------------------------------------------
# preprocessing and splitting
# ----------------------------------------------------------------------------

def normalize_features(X, lo=None, hi=None):
    """Affine map of [lo, hi] onto [0, 1]; defaults to the data's own range."""
    X = np.asarray(X, dtype=np.float64)
    lo = float(X.min()) if lo is None else float(lo)
    hi = float(X.max()) if hi is None else float(hi)
    if hi <= lo:
        return np.zeros_like(X)
    if lo == 0.0 and hi == 1.0:
        return X.copy()
    return (X - lo) / (hi - lo)


def add_bias_column(X):
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.ones((len(X), 1))])


def subset(dataset, idx, **meta):
    idx = np.asarray(idx)
    return Dataset(dataset.features[idx], dataset.labels[idx], dataset.num_classes,
                   {**dataset.meta, **meta})


def split_train_val(dataset, n_train=50000, seed=0):
    """Disjoint, exhaustive, seed-deterministic split into (train, val)."""
    n = len(dataset)
    if n_train > n:
        raise ValueError(f'cannot take {n_train} training rows from {n}')
    if n_train < 1:
        raise ValueError('n_train must be positive')
    perm = np.random.default_rng(seed).permutation(n)
    train = subset(dataset, np.sort(perm[:n_train]), split='train')
    val = subset(dataset, np.sort(perm[n_train:]), split='val')
    if len(val) == 0:
        warnings.warn('validation split is empty', stacklevel=2)
        val.meta['empty'] = True
    return train, val


# ----------------------------------------------------------------------------
# synthetic data
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SignalSpec:
    """A sampled sine signal plus Gaussian noise.

    sine1d: sin(2 pi i / size), i = 1..size.
    sine2d: sin(2 pi i / size) sin(2 pi j / size) on a size x size grid,
    flattened row-major.
    """

    kind: str = 'sine1d'
    size: int = 100
    noise_scale: float = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ('sine1d', 'sine2d'):
            raise ValueError(f'unknown signal kind {self.kind!r}')
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f'size must be a positive integer, got {self.size}')
        if self.noise_scale is None:
            object.__setattr__(self, 'noise_scale', 0.1 if self.kind == 'sine1d' else 0.2)
        if self.noise_scale < 0:
            raise ValueError('noise_scale must be nonnegative')

    @property
    def length(self):
        return self.size if self.kind == 'sine1d' else self.size * self.size


def make_signal(spec):
    """(clean, noisy) vectors; one scalar N(0, 1) draw per sample point."""
    wave = np.sin(2.0 * np.pi * np.arange(1, spec.size + 1) / spec.size)
    clean = wave if spec.kind == 'sine1d' else np.outer(wave, wave).ravel()
    noise = np.random.default_rng(spec.seed).standard_normal(clean.size)
    return clean, clean + spec.noise_scale * noise


def make_blobs(n, num_classes=10, side=14, separation=4.0, stdev=1.0,
               smoothness=3, seed=0, bias=True):
    """Gaussian clusters whose centres are smooth side x side images.

    Centres are low-pass filtered random fields rescaled so that every pair
    is at least `separation * stdev` apart; points are centre + stdev * noise
    per pixel. The result mimics the spatially correlated structure of small
    digit images, flattened row-major.
    """
    rng = np.random.default_rng(seed)
    p = side * side
    centres = _smooth_centres(rng, num_classes, side, smoothness)
    gaps = np.linalg.norm(centres[:, None] - centres[None, :], axis=-1)
    min_gap = gaps[~np.eye(num_classes, dtype=bool)].min()
    centres *= separation * stdev / min_gap
    labels = rng.integers(num_classes, size=n)
    X = centres[labels] + stdev * rng.standard_normal((n, p))
    if bias:
        X = add_bias_column(X)
    meta = {'source': 'blobs', 'side': side, 'separation': separation,
            'stdev': stdev, 'seed': seed}
    return Dataset(X, labels, num_classes, meta)


def _smooth_centres(rng, k, side, smoothness):
    fields = rng.standard_normal((k, side, side))
    freq = np.fft.fftfreq(side)
    kx, ky = np.meshgrid(freq, freq, indexing='ij')
    mask = np.exp(-(kx ** 2 + ky ** 2) * (smoothness * side / 4.0) ** 2)
    smooth = np.fft.ifft2(np.fft.fft2(fields) * mask).real
    smooth -= smooth.mean(axis=(1, 2), keepdims=True)
    return smooth.reshape(k, -1)


def export_csv(dataset, path):
    """Write features and labels with a header row f0..f{p-1},label."""
    p = dataset.num_features
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow([f'f{j}' for j in range(p)] + ['label'])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(x)) for x in row] + [int(label)])
