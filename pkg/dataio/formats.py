"""
On-disk corpora: IDX (the classic MNIST container) and numeric CSV.

IDX header: two zero bytes, a type byte (0x08 = unsigned byte), a dimension
count byte, then one big-endian uint32 per dimension, then the payload.
"""
import csv
import struct
from pathlib import Path

import numpy as np

from dhalab.exceptions import CsvFormatError, DatasetError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError

from .datasets import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_idx(path, magic):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: {len(raw)} bytes, shorter than the IDX magic")
    (found,) = struct.unpack('>I', raw[:4])
    if found != magic:
        raise IdxMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header needs {header} bytes, file has {len(raw)}")
    dims = struct.unpack(f'>{ndim}I', raw[4:header])
    expected = header + int(np.prod(dims))
    if len(raw) < expected:
        raise IdxTruncatedError(f"{path}: payload needs {expected} bytes, file has {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes=None):
    """(N, 1, H, W) images scaled to [0, 1] with their labels."""
    images = _read_idx(images_path, IMAGES_MAGIC)
    labels = _read_idx(labels_path, LABELS_MAGIC).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels, num_classes, 'image',
                   {'images': str(images_path), 'labels': str(labels_path)})


def write_idx(dataset, images_path, labels_path):
    """Inverse of load_idx for single-channel image datasets."""
    if dataset.kind != 'image' or dataset.x.shape[1] != 1:
        raise DatasetError("IDX holds single-channel images only")
    n, _, h, w = dataset.x.shape
    pixels = np.rint(dataset.x[:, 0] * 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack('>IIII', IMAGES_MAGIC, n, h, w) + pixels.tobytes())
    Path(labels_path).write_bytes(struct.pack('>II', LABELS_MAGIC, n) + dataset.y.astype(np.uint8).tobytes())


def minmax_normalize(x):
    """Per-column scaling to [0, 1]; constant columns map to 0."""
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (x - lo) / safe, 0.0)


def load_csv(path, label_column=-1, header=False):
    """
    Numeric CSV rows -> vector dataset. Labels are remapped onto
    0..K-1 in sorted order of their original values.
    """
    with open(path, newline='') as handle:
        rows = [row for row in csv.reader(handle) if row]
    if header and rows:
        rows = rows[1:]
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    first_line = 2 if header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise CsvFormatError(f"{path}: row {r + first_line} has {len(row)} columns, expected {width}")
        for c, cell in enumerate(row):
            try:
                values[r, c] = float(cell)
            except ValueError:
                raise CsvFormatError(f"{path}: row {r + first_line}, column {c + 1}: {cell!r} is not numeric") from None
    column = label_column % width
    features = np.delete(values, column, axis=1)
    classes, labels = np.unique(values[:, column], return_inverse=True)
    return Dataset(minmax_normalize(features), labels, len(classes), 'vector',
                   {'csv': str(path), 'label_column': label_column})
