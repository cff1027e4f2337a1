"""Synthetic and file-backed sample sets, and seeded disjoint splits."""

import csv
import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .models import SampleSet
from .numerics import make_rng

DATASET_KINDS = ("gaussian_blobs", "two_moons", "csv_file", "idx_file")


def gaussian_blobs(num_classes=10, dim=100, per_class=200, center_scale=1.0, noise=1.0, seed=0,
                   center_rank=None, offset=0.0):
    """Isotropic Gaussian clusters.

    Centers have i.i.d. N(0, center_scale^2) coordinates, or, with
    ``center_rank=k``, are drawn inside a random k-dimensional subspace with
    the same expected squared norm. Noise is isotropic in all ``dim``
    coordinates either way. ``offset`` is added to every coordinate, giving
    image-like data that is not centered at the origin.
    """
    if num_classes < 2 or dim < 1 or per_class < 1 or noise < 0 or center_scale <= 0:
        raise ConfigError("invalid gaussian_blobs parameters")
    if center_rank is not None and not 1 <= center_rank <= dim:
        raise ConfigError("center_rank must lie in [1, dim]")
    rng = make_rng(seed)
    if center_rank is None:
        centers = rng.standard_normal((num_classes, dim)) * center_scale
    else:
        basis, _ = np.linalg.qr(rng.standard_normal((dim, center_rank)))
        coef = rng.standard_normal((num_classes, center_rank))
        centers = center_scale * np.sqrt(dim / center_rank) * coef @ basis.T
    labels = np.repeat(np.arange(num_classes), per_class)
    inputs = centers[labels] + noise * rng.standard_normal((labels.size, dim)) + offset
    return SampleSet(inputs, labels, "gaussian_blobs")


def two_moons(per_class=200, noise=0.1, seed=0):
    if per_class < 1 or noise < 0:
        raise ConfigError("invalid two_moons parameters")
    rng = make_rng(seed)
    t0 = rng.uniform(0, np.pi, per_class)
    t1 = rng.uniform(0, np.pi, per_class)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1 - np.cos(t1), 0.5 - np.sin(t1)])
    inputs = np.vstack([upper, lower]) + noise * rng.standard_normal((2 * per_class, 2))
    labels = np.repeat([0, 1], per_class)
    return SampleSet(inputs, labels, "two_moons")


def load_csv(path, label_column=-1):
    """Numeric CSV, one sample per row; the label column holds class indices.

    A first row that does not parse as numbers is treated as a header.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise ParseError(f"{path}: line {lineno}: non-numeric field") from None
    if not rows:
        raise ParseError(f"{path}: no samples")
    if len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: rows differ in length")
    arr = np.asarray(rows)
    labels = arr[:, label_column]
    if np.any(labels != np.round(labels)):
        raise ParseError(f"{path}: labels must be integers")
    inputs = np.delete(arr, label_column % arr.shape[1], axis=1)
    return SampleSet(inputs, labels.astype(np.int64), Path(path).stem)


def _read_idx(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ParseError(f"{path}: truncated IDX header")
    zero, dtype, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype != 0x08:
        raise ParseError(f"{path}: only unsigned-byte IDX files are supported")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise ParseError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(shape)) if shape else 0
    if len(raw) - head != count:
        raise ParseError(f"{path}: expected {count} data bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(shape)


def load_idx(images_path, labels_path):
    """IDX image/label pair (MNIST layout); pixels are mapped to [0, 1]."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ParseError("IDX image and label counts disagree")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return SampleSet(inputs, labels.astype(np.int64), Path(images_path).stem)


def load_dataset(spec):
    """Build a ``SampleSet`` from a dataset spec dict with a ``kind`` key."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "gaussian_blobs":
        return gaussian_blobs(**spec)
    if kind == "two_moons":
        return two_moons(**spec)
    if kind == "csv_file":
        return load_csv(spec["path"], spec.get("label_column", -1))
    if kind == "idx_file":
        return load_idx(spec["images"], spec["labels"])
    raise ConfigError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")


def split(data, fractions, seed=0):
    """Disjoint seeded partition of ``data``.

    ``fractions`` maps split names to fractions of the pool (summing to <= 1);
    returns a dict of ``SampleSet`` objects in the same order.
    """
    total = sum(fractions.values())
    if total > 1 + 1e-12 or any(f < 0 for f in fractions.values()):
        raise ConfigError("split fractions must be nonnegative and sum to at most 1")
    order = make_rng(seed).permutation(len(data))
    out = {}
    start = 0
    for name, frac in fractions.items():
        n = int(round(frac * len(data)))
        idx = np.sort(order[start:start + n])
        if idx.size == 0:
            raise ConfigError(f"split {name!r} is empty")
        out[name] = data.subset(idx, name)
        start += n
    return out
