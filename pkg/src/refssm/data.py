"""Sequence datasets: sequential CIFAR-10 (gray), sequential MNIST, synthetic tasks.

Pixel sequences are row-major flattenings scaled to [0, 1]; no augmentation.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptRecordError, FormatError, IngestError

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
LUMA = np.array([0.299, 0.587, 0.114])

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
DATA_ROOT_ENV = "REFSSM_DATA_ROOT"


@dataclass
class SequenceDataset:
    sequences: np.ndarray  # (B, C, L) float
    labels: np.ndarray  # (B,) int64
    split: str
    n_classes: int
    name: str = ""
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sequences.ndim != 3 or len(self.sequences) != len(self.labels):
            raise ConfigError(f"bad dataset shapes {self.sequences.shape} / {self.labels.shape}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigError(f"labels outside [0, {self.n_classes})")
        if not self.stats:
            s = self.sequences
            self.stats = {"mean": float(s.mean()), "std": float(s.std()),
                          "min": float(s.min()), "max": float(s.max())} if s.size else {}

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def seq_len(self) -> int:
        return self.sequences.shape[-1]

    @property
    def d_input(self) -> int:
        return self.sequences.shape[1]

    def subset(self, idx) -> "SequenceDataset":
        return SequenceDataset(self.sequences[idx], self.labels[idx], self.split, self.n_classes, self.name)


def resolve_data_root(path: str | os.PathLike | None) -> Path | None:
    """Explicit path, else the ``REFSSM_DATA_ROOT`` environment variable."""
    if path:
        return Path(path)
    env = os.environ.get(DATA_ROOT_ENV)
    return Path(env) if env else None


# --- CIFAR-10 binary version ----------------------------------------------

def read_cifar_batch(path, n_records: int = 10000):
    """Raw (labels uint8 (n,), images uint8 (n, 3, 32, 32)) from one batch file."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing CIFAR-10 file {path}", offset=0)
    raw = path.read_bytes()
    expected = n_records * CIFAR_RECORD
    if len(raw) < expected:
        raise IngestError(f"truncated CIFAR-10 file {path}: {len(raw)} of {expected} bytes",
                          offset=len(raw) - len(raw) % CIFAR_RECORD)
    if len(raw) > expected:
        raise IngestError(f"oversized CIFAR-10 file {path}: expected {expected} bytes", offset=expected)
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(n_records, CIFAR_RECORD)
    labels = rec[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CorruptRecordError(f"label byte {labels[bad[0]]} > 9 in {path} record {bad[0]}",
                                 offset=int(bad[0]) * CIFAR_RECORD)
    return labels.copy(), rec[:, 1:].reshape(n_records, 3, 32, 32).copy()


def encode_cifar_records(labels, images) -> bytes:
    """Inverse of ``read_cifar_batch``: label byte + channel-planar RGB per record."""
    labels = np.asarray(labels, dtype=np.uint8)
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    return np.concatenate([labels[:, None], images], axis=1).tobytes()


def cifar_to_gray_seq(images) -> np.ndarray:
    """(n, 3, 32, 32) uint8 -> (n, 1, 1024) luma in [0, 1], row-major."""
    images = np.asarray(images, dtype=np.float64)
    gray = np.einsum("c,ncij->nij", LUMA, images) / 255.0
    return np.clip(gray, 0.0, 1.0).reshape(len(images), 1, 32 * 32)


def _cifar_dir(root: Path) -> Path:
    sub = root / "cifar-10-batches-bin"
    return sub if sub.is_dir() else root


def load_cifar10_gray_seq(path, records_per_file: int = 10000):
    """(train, test) grayscale sequential CIFAR-10 from the binary-version files."""
    root = _cifar_dir(Path(path))
    parts = [read_cifar_batch(root / f, records_per_file) for f in CIFAR_TRAIN_FILES]
    tr_labels = np.concatenate([p[0] for p in parts]).astype(np.int64)
    tr_seq = cifar_to_gray_seq(np.concatenate([p[1] for p in parts]))
    te_labels, te_images = read_cifar_batch(root / CIFAR_TEST_FILE, records_per_file)
    train = SequenceDataset(tr_seq, tr_labels, "train", 10, "scifar")
    test = SequenceDataset(cifar_to_gray_seq(te_images), te_labels.astype(np.int64), "test", 10, "scifar")
    return train, test


# --- MNIST IDX ------------------------------------------------------------

def read_idx(path, expected_magic: int) -> np.ndarray:
    """Parse an IDX file (optionally gzipped) with big-endian header."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing IDX file {path}", offset=0)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path} too short for an IDX header", offset=len(raw))
    (magic,) = struct.unpack(">i", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic {magic}, expected {expected_magic}", offset=0)
    if raw[2] != 0x08:
        raise FormatError(f"{path}: only unsigned-byte IDX data supported", offset=2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IngestError(f"{path}: truncated data, {len(raw) - header} of {count} bytes",
                          offset=len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def _find(root: Path, names) -> Path:
    for n in names:
        for cand in (root / n, root / (n + ".gz")):
            if cand.exists():
                return cand
    return root / names[0]


def _mnist_split(root: Path, prefix: str, crop: int | None, split: str):
    img_path = _find(root, [f"{prefix}-images-idx3-ubyte", f"{prefix}-images.idx3-ubyte"])
    lab_path = _find(root, [f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels.idx1-ubyte"])
    images = read_idx(img_path, IDX_IMAGES_MAGIC)
    labels = read_idx(lab_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise FormatError(f"inconsistent MNIST shapes {images.shape} / {labels.shape}")
    if crop:
        rows, cols = images.shape[1:]
        top, left = (rows - crop) // 2, (cols - crop) // 2
        images = images[:, top : top + crop, left : left + crop]
    seq = (images.reshape(len(images), 1, -1) / 255.0).astype(np.float64)
    return SequenceDataset(seq, labels.astype(np.int64), split, 10, "smnist" if not crop else f"smnist{crop * crop}")


def load_mnist_seq(path, crop: int | None = None):
    """(train, test) sequential MNIST; ``crop=16`` center-crops to 16x16 (L = 256)."""
    root = Path(path)
    mnist = root / "mnist"
    if not _find(root, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]).exists() and mnist.is_dir():
        root = mnist
    return _mnist_split(root, "train", crop, "train"), _mnist_split(root, "t10k", crop, "test")


# --- synthetic tasks --------------------------------------------------------

TOKEN_LEN = 10
# fixed so the task definition does not depend on the data seed
_PATTERN_SEED = 20240601


def class_tokens(n_classes: int, token_len: int = TOKEN_LEN) -> np.ndarray:
    """Distinct +-1 amplitude patterns, one row per class."""
    if n_classes > 2**token_len:
        raise ConfigError(f"cannot make {n_classes} distinct tokens of length {token_len}")
    rng = np.random.default_rng(_PATTERN_SEED)
    if n_classes == 2:
        # maximally separated pair
        first = np.where(rng.random(token_len) < 0.5, -1.0, 1.0)
        return np.stack([first, -first])
    seen = {}
    while len(seen) < n_classes:
        row = np.where(rng.random(token_len) < 0.5, -1.0, 1.0)
        seen.setdefault(row.tobytes(), row)
    return np.stack(list(seen.values()))


def synth_task_gen(task: str, n: int, L: int, seed: int, n_classes: int | None = None,
                   noise: float = 0.05, split: str = "train") -> SequenceDataset:
    """Seeded synthetic sequence-classification data.

    ``delayed_class``: a class token in the first 10 steps, then noise only;
    the label is the token's class.
    ``adding``: channel 0 holds U[0, 1) values, channel 1 marks two positions
    (one per half); the label is the marked sum binned into 10 equal bins over [0, 2).
    """
    rng = np.random.default_rng(seed)
    if task in ("delayed_class", "synth-delayed"):
        K = 2 if n_classes is None else n_classes
        tok = class_tokens(K, min(TOKEN_LEN, L))
        labels = rng.integers(0, K, size=n)
        x = noise * rng.standard_normal((n, 1, L)) if noise > 0 else np.zeros((n, 1, L))
        x[:, 0, : tok.shape[1]] = tok[labels]
        return SequenceDataset(x, labels.astype(np.int64), split, K, "delayed_class")
    if task in ("adding", "synth-adding"):
        if L < 2:
            raise ConfigError("adding task needs L >= 2")
        K = 10 if n_classes is None else n_classes
        vals = rng.random((n, L))
        half = L // 2
        i1 = rng.integers(0, half, size=n)
        i2 = rng.integers(half, L, size=n)
        marks = np.zeros((n, L))
        marks[np.arange(n), i1] = 1.0
        marks[np.arange(n), i2] = 1.0
        total = vals[np.arange(n), i1] + vals[np.arange(n), i2]
        labels = np.minimum((total / 2.0 * K).astype(np.int64), K - 1)
        x = np.stack([vals, marks], axis=1)
        return SequenceDataset(x, labels, split, K, "adding")
    raise ConfigError(f"unknown synthetic task {task!r}")
