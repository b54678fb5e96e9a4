"""Dataset ingestion and synthesis."""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, CountMismatch, NoLabels, TruncatedFile, UnsupportedFormat

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    x: np.ndarray  # (n, dim)
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        self.x = x.reshape(len(x), int(np.prod(x.shape[1:], dtype=np.int64)) if x.ndim > 1 else 1)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.x),):
                raise CountMismatch(f"{len(self.x)} items but {len(self.labels)} labels")

    def __len__(self):
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


def gen_two_gaussian_toy(rng: np.random.Generator, n: int, means=((-3.0, 0.0), (3.0, 0.0)),
                         cov_scale: float = 0.5) -> LabeledDataset:
    """Equal-weight mixture of two isotropic 2-D Gaussians; ``n // 2`` points
    from the first component, the rest from the second."""
    if n < 2:
        raise ValueError("n must be >= 2")
    means = np.asarray(means, dtype=np.float64)
    labels = np.repeat([0, 1], [n // 2, n - n // 2])
    x = means[labels] + np.sqrt(cov_scale) * rng.standard_normal((n, 2))
    return LabeledDataset(x, labels, f"two-gaussian toy (cov_scale={cov_scale})")


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFile(f"{what}: expected {n} bytes, got {len(data)}")
    return data


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, path))
        if magic != IMAGE_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        rows, cols = struct.unpack(">II", _read_exact(fh, 8, path))
        pixels = np.frombuffer(_read_exact(fh, count * rows * cols, path), dtype=np.uint8)
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, path))
        if magic != LABEL_MAGIC:
            raise BadMagic(f"{path}: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        return np.frombuffer(_read_exact(fh, count, path), dtype=np.uint8).copy()


def write_idx(images, labels, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, count, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def load_mnist_idx(images_path, labels_path) -> LabeledDataset:
    """Images flattened to 784-vectors in [0, 1] (pixel / 255)."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatch(f"{len(images)} images but {len(labels)} labels")
    return LabeledDataset(images.reshape(len(images), -1) / 255.0, labels, str(images_path))


def filter_classes(ds: LabeledDataset, keep) -> LabeledDataset:
    if ds.labels is None:
        raise NoLabels("dataset has no labels to filter on")
    mask = np.isin(ds.labels, list(keep))
    return LabeledDataset(ds.x[mask].reshape(int(mask.sum()), ds.dim), ds.labels[mask], ds.source)


def split(ds: LabeledDataset, test_fraction: float, rng: np.random.Generator):
    """Shuffled train/test split; returns ``(train, test)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    parts = []
    for idx in (order[n_test:], order[:n_test]):
        labels = ds.labels[idx] if ds.labels is not None else None
        parts.append(LabeledDataset(ds.x[idx].reshape(len(idx), ds.dim), labels, ds.source))
    return parts[0], parts[1]


def synthetic_digits(rng: np.random.Generator, n_per_class: int = 100, size: int = 28) -> LabeledDataset:
    """Stand-in for handwritten 0/1 images: jittered rings and slanted strokes.

    Pixels are quantized to bytes so the set survives an IDX round trip.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images, labels = [], []
    c = (size - 1) / 2.0
    for label in (0, 1):
        for _ in range(n_per_class):
            cx, cy = c + rng.uniform(-1.5, 1.5), c + rng.uniform(-1.5, 1.5)
            thick = rng.uniform(1.0, 1.8)
            if label == 0:
                ax, ay = rng.uniform(4.5, 6.5), rng.uniform(7.5, 9.5)
                r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
                dist = np.abs(r - 1.0) * min(ax, ay)
            else:
                slant = rng.uniform(-0.3, 0.3)
                half = rng.uniform(8.0, 10.0)
                # distance to the segment x = cx + slant * (y - cy), |y - cy| <= half
                t = np.clip(yy - cy, -half, half)
                dist = np.hypot(xx - (cx + slant * t), yy - (cy + t))
            img = np.clip(1.5 - dist / thick, 0.0, 1.0)
            images.append(np.round(img * 255).astype(np.uint8))
            labels.append(label)
    images = np.array(images)
    order = rng.permutation(len(images))
    return LabeledDataset(images[order].reshape(len(images), -1) / 255.0, np.array(labels)[order],
                          "synthetic 0/1 digits")


# -- dataset cache ---------------------------------------------------------

def save_csv(ds: LabeledDataset, path) -> None:
    """One row per item; the label (if any) is the last column."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"x{i}" for i in range(ds.dim)] + (["label"] if ds.labels is not None else [])
        w.writerow(header)
        for i, row in enumerate(ds.x):
            vals = [repr(float(v)) for v in row]
            if ds.labels is not None:
                vals.append(str(int(ds.labels[i])))
            w.writerow(vals)


def load_csv(path) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TruncatedFile(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    has_labels = header[-1] == "label"
    data = np.array([[float(v) for v in r] for r in body], dtype=np.float64).reshape(len(body), len(header))
    if has_labels:
        return LabeledDataset(data[:, :-1], data[:, -1].astype(np.int64), str(path))
    return LabeledDataset(data, None, str(path))


def save_raw(ds: LabeledDataset, path) -> None:
    """Little-endian float64 matrix plus a ``.json`` sidecar manifest."""
    path = Path(path)
    x = ds.x if ds.labels is None else np.column_stack([ds.x, ds.labels])
    x.astype("<f8").tofile(path)
    manifest = {"dim": ds.dim, "count": len(ds), "labels_present": ds.labels is not None}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, sort_keys=True))


def load_raw(path) -> LabeledDataset:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    width = meta["dim"] + (1 if meta["labels_present"] else 0)
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != meta["count"] * width:
        raise TruncatedFile(f"{path}: {flat.size} values, manifest promises {meta['count'] * width}")
    x = flat.reshape(meta["count"], width)
    if meta["labels_present"]:
        return LabeledDataset(x[:, :-1], x[:, -1].astype(np.int64), str(path))
    return LabeledDataset(x, None, str(path))


def load_any(path, labels_path=None) -> LabeledDataset:
    """Dispatch on file type: IDX pair, ``.csv`` or raw ``.f64``/``.bin``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if labels_path is not None:
        return load_mnist_idx(path, labels_path)
    if path.suffix == ".csv":
        return load_csv(path)
    if path.with_suffix(path.suffix + ".json").exists():
        return load_raw(path)
    raise UnsupportedFormat(f"{path}: unknown dataset format")
