"""Reading and writing features, labels, joints and image tensors.

Binary tensors use the XFT1 layout::

    b"XFT1" | dtype code (u8) | rank (u8) | rank x dim (u64 LE) | payload

with a row-major little-endian payload. Dtype codes: 0=f32, 1=f64, 2=u8,
3=i64.
"""

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DataError,
    FormatError,
    ParseError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)

MAGIC = b"XFT1"

DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i8"),
}
_CODE_FOR_KIND = {(d.kind, d.itemsize): c for c, d in DTYPE_CODES.items()}

_DECIMAL = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")
_INTEGER = re.compile(r"^[+-]?\d+$")


@dataclass
class LabelVector:
    """Class indices in ``[0, n_classes)`` with every class present.

    ``mapping`` records original label -> index when the input labels were
    not already ``0..C-1``; it is ``None`` otherwise.
    """

    labels: np.ndarray
    n_classes: int
    mapping: dict = field(default=None)

    @classmethod
    def from_values(cls, values):
        values = np.asarray(values)
        if values.ndim != 1:
            raise DataError(f"labels must be one-dimensional, got shape {values.shape}")
        if values.size == 0:
            raise DataError("no labels")
        if values.dtype.kind == "f":
            if not np.all(np.isfinite(values)) or np.any(values != np.round(values)):
                raise DataError("labels must be integers")
            values = values.astype(np.int64)
        elif values.dtype.kind not in "iub":
            raise DataError(f"labels must be integers, got dtype {values.dtype}")
        values = values.astype(np.int64)
        if np.any(values < 0):
            raise DataError("labels must be non-negative")
        uniq, inverse = np.unique(values, return_inverse=True)
        mapping = None
        if uniq[0] != 0 or uniq[-1] != len(uniq) - 1:
            mapping = {int(u): i for i, u in enumerate(uniq)}
        return cls(inverse.astype(np.int64).ravel(), len(uniq), mapping)

    def __len__(self):
        return len(self.labels)


def _lines(path):
    text = Path(path).read_text(encoding="utf-8")
    # splitlines would also split on \x0b, \x1c etc.; only \n and \r\n are line ends
    return text.replace("\r\n", "\n").split("\n")


def _parse_decimal(cell, line, column):
    token = cell.strip()
    if not _DECIMAL.match(token):
        raise ParseError(f"not a decimal number: {cell!r}", line=line, column=column)
    value = float(token)
    if not np.isfinite(value):
        raise ParseError(f"value out of range: {cell!r}", line=line, column=column)
    return value


def read_matrix_csv(path, has_header=False):
    """Parse a rectangular comma-separated matrix of finite decimals."""
    rows = []
    width = None
    header_seen = not has_header
    for lineno, line in enumerate(_lines(path), start=1):
        if not line.strip():
            continue
        if not header_seen:
            header_seen = True
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise FormatError(f"expected {width} columns, found {len(cells)}", line=lineno)
        rows.append([_parse_decimal(c, lineno, j + 1) for j, c in enumerate(cells)])
    if not rows:
        raise FormatError("no rows")
    return np.array(rows, dtype=np.float64)


def as_feature_matrix(values):
    """Validate and return an ``m x k`` float64 feature matrix (m >= 2)."""
    F = np.asarray(values)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise DataError(f"feature matrix must be 2-d, got shape {F.shape}")
    if F.dtype.kind not in "fiub":
        raise DataError(f"feature matrix must be numeric, got dtype {F.dtype}")
    F = F.astype(np.float64, copy=False)
    m, k = F.shape
    if m < 2:
        raise DataError(f"feature matrix needs at least 2 rows, got {m}")
    if k < 1:
        raise DataError("feature matrix has no columns")
    if not np.all(np.isfinite(F)):
        bad = np.argwhere(~np.isfinite(F))[0]
        raise DataError(f"non-finite feature value at row {bad[0]}, column {bad[1]}")
    return F


def read_feature_csv(path, has_header=False):
    return as_feature_matrix(read_matrix_csv(path, has_header=has_header))


def write_feature_csv(path, F, header=None):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in F:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_tensor_binary(path, array):
    array = np.asarray(array)
    code = _CODE_FOR_KIND.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise UnsupportedDtypeError(f"no XFT1 dtype code for {array.dtype}")
    if array.ndim > 255:
        raise DataError("rank above 255 cannot be encoded")
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", code, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(payload.tobytes(order="C"))


def read_tensor_binary(path):
    """Read an XFT1 file into an array of exactly the declared shape."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 6:
        raise TruncatedPayloadError(f"{path}: header truncated")
    code, rank = raw[4], raw[5]
    if code not in DTYPE_CODES:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {code}")
    dims_end = 6 + 8 * rank
    if len(raw) < dims_end:
        raise TruncatedPayloadError(f"{path}: header truncated")
    shape = struct.unpack(f"<{rank}Q", raw[6:dims_end])
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.uint64)) if rank else 1
    expected = count * dtype.itemsize
    got = len(raw) - dims_end
    if got < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {got // dtype.itemsize} values, header declares {count}"
        )
    if got > expected:
        raise FormatError(f"{path}: {got - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def is_xft1(path):
    with open(path, "rb") as fh:
        return fh.read(4) == MAGIC


def read_features(path, has_header=False):
    """Read a feature matrix from CSV or XFT1, sniffing the magic bytes."""
    if is_xft1(path):
        return as_feature_matrix(read_tensor_binary(path))
    return read_feature_csv(path, has_header=has_header)


def read_labels(path):
    values = []
    for lineno, line in enumerate(_lines(path), start=1):
        token = line.strip()
        if not token:
            continue
        if not _INTEGER.match(token):
            raise ParseError(f"not an integer label: {token!r}", line=lineno)
        value = int(token)
        if value < 0:
            raise ParseError(f"negative label {value}", line=lineno)
        values.append(value)
    if not values:
        raise FormatError("no rows")
    return LabelVector.from_values(np.array(values, dtype=np.int64))


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in np.asarray(labels).ravel():
            fh.write(f"{int(v)}\n")


def as_image_set(images):
    """Validate an ``m x H x W [x C]`` image tensor; returns a 4-d float64 array."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise DataError(f"images must have shape m x H x W [x C], got {images.shape}")
    if images.shape[-1] not in (1, 3):
        raise DataError(f"images must have 1 or 3 channels, got {images.shape[-1]}")
    images = images.astype(np.float64, copy=False)
    if not np.all(np.isfinite(images)):
        raise DataError("non-finite pixel value")
    return images
