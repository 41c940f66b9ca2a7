"""Dataset ingestion: IDX images, CSV tables and seeded synthetic sets."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int
    name: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DatasetError(f"X {self.X.shape} and y {self.y.shape} disagree")
        if not np.all(np.isfinite(self.X)):
            raise DatasetError("features must be finite")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def feature_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-feature min and max over the training split only."""
        Xt = self.X[self.train_idx]
        return Xt.min(0), Xt.max(0)


def split(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def make_dataset(X, y, n_classes=None, test_fraction=0.25, seed=0, name="") -> Dataset:
    y = np.asarray(y, dtype=np.int64)
    train_idx, test_idx = split(len(y), test_fraction, seed)
    return Dataset(X, y, train_idx, test_idx, int(n_classes or y.max() + 1), name)


# ---------------------------------------------------------------------------
# synthetic sets

def synthetic_blobs(n_samples=2000, n_features=16, n_classes=5, seed=0, spread=1.0) -> Dataset:
    """Isotropic Gaussian blobs around seeded centers."""
    rng = np.random.default_rng([seed, 11])
    centers = rng.uniform(-4, 4, size=(n_classes, n_features))
    y = np.arange(n_samples) % n_classes
    X = centers[y] + spread * rng.standard_normal((n_samples, n_features))
    return make_dataset(X, y, n_classes, seed=seed, name="synthetic-blobs")


def synthetic_rings(n_samples=2000, n_features=8, seed=0, noise=0.05) -> Dataset:
    """Two balanced classes: inside or outside the median RMS radius of ``x``.

    ``x`` is uniform in a cube and the radius is jittered by ``noise``.  The
    boundary is not linear, so a model must combine squared features.
    """
    rng = np.random.default_rng([seed, 13])
    X = rng.uniform(-1, 1, size=(n_samples, n_features))
    r = np.sqrt((X**2).mean(1)) + noise * rng.standard_normal(n_samples)
    y = (r > np.median(r)).astype(np.int64)
    return make_dataset(X, y, 2, seed=seed, name="synthetic-rings")


def digits_8x8(seed=0) -> Dataset:
    """The 8x8 handwritten digit set bundled with scikit-learn (64 features, 10 classes)."""
    from sklearn.datasets import load_digits

    d = load_digits()
    return make_dataset(d.data, d.target, 10, seed=seed, name="digits-8x8")


# ---------------------------------------------------------------------------
# files

def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file (the MNIST container format)."""
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DatasetError(f"{path}: byte 0: bad IDX magic")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if raw[2] not in dtypes:
        raise DatasetError(f"{path}: byte 2: unknown IDX type code 0x{raw[2]:02x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    dtype = np.dtype(dtypes[raw[2]])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DatasetError(f"{path}: byte {header}: expected {expected} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def load_idx_images(images: str | Path, labels: str | Path, seed=0) -> Dataset:
    X = read_idx(images)
    y = read_idx(labels)
    if len(X) != len(y):
        raise DatasetError(f"{images}: {len(X)} images but {len(y)} labels")
    X = X.reshape(len(X), -1).astype(np.float64)
    return make_dataset(X, y.astype(np.int64), int(y.max()) + 1, seed=seed, name=Path(images).name)


def load_csv(path: str | Path, label_column=-1, seed=0) -> Dataset:
    """Numeric CSV; one column holds integer labels, an optional non-numeric header is skipped."""
    path = Path(path)
    rows, labels = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise DatasetError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if rows and len(values) != len(rows[0]) + 1:
                raise DatasetError(f"{path}:{lineno}: expected {len(rows[0]) + 1} columns, got {len(values)}")
            label = values.pop(label_column)
            if label != int(label) or label < 0:
                raise DatasetError(f"{path}:{lineno}: label {label} is not a non-negative integer")
            rows.append(values)
            labels.append(int(label))
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    y = np.asarray(labels)
    return make_dataset(np.asarray(rows), y, int(y.max()) + 1, seed=seed, name=path.name)


def parse_synthetic_spec(spec: str) -> tuple[str, dict]:
    """``"blobs:n=2000,dims=16,classes=5,seed=0"`` into a kind and keyword dict."""
    kind, _, rest = spec.partition(":")
    kwargs = {}
    for item in filter(None, rest.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise DatasetError(f"synthetic spec {spec!r}: expected key=value, got {item!r}")
        kwargs[key.strip()] = float(value) if "." in value else int(value)
    return kind.strip(), kwargs


def load_dataset(source: str, fmt: str | None = None, *, n_features=None, n_classes=None, seed=0) -> Dataset:
    """Load by path or synthetic spec.

    ``fmt`` is ``"idx-images"`` (``source`` = ``"images.idx,labels.idx"``),
    ``"csv-tabular"`` or ``"synthetic"``; when omitted it is inferred.
    Synthetic sets take missing dimensions from ``n_features``/``n_classes``.
    """
    if fmt is None:
        if source.startswith(("synthetic", "blobs", "rings", "digits")):
            fmt = "synthetic"
        elif "," in source or "idx" in Path(source.split(",")[0]).name:
            fmt = "idx-images"
        else:
            fmt = "csv-tabular"
    if fmt == "synthetic":
        kind, kw = parse_synthetic_spec(source)
        kind = kind.removeprefix("synthetic-")
        seed = int(kw.pop("seed", seed))
        n = int(kw.pop("n", 2000))
        dims = int(kw.pop("dims", n_features or 16))
        if kind == "blobs":
            classes = int(kw.pop("classes", n_classes if n_classes and n_classes > 1 else 2))
            return synthetic_blobs(n, dims, classes, seed, float(kw.pop("spread", 1.0)))
        if kind == "rings":
            return synthetic_rings(n, dims, seed, float(kw.pop("noise", 0.05)))
        if kind in ("digits", "digits8x8"):
            return digits_8x8(seed)
        raise DatasetError(f"unknown synthetic dataset {kind!r}")
    if fmt == "idx-images":
        images, sep, labels = source.partition(",")
        if not sep:
            raise DatasetError(f"{source}: idx-images needs 'images,labels' paths")
        for p in (images, labels):
            if not Path(p).exists():
                raise DatasetError(f"{p}: no such file")
        return load_idx_images(images, labels, seed)
    if fmt == "csv-tabular":
        if not Path(source).exists():
            raise DatasetError(f"{source}: no such file")
        return load_csv(source, seed=seed)
    raise DatasetError(f"unknown dataset format {fmt!r}")
