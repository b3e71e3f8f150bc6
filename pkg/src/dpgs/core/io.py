"""Dataset files (CSV and the DPGE binary layout) and a tagged block container.

Binary dataset layout, all little-endian::

    b"DPGE"  u32 version=1  u64 n  u64 d  u8 has_labels
    f64[n*d] row-major data
    u32[n]   labels (only when has_labels)

Block container (used for fitted models)::

    magic[4]  u32 version  u32 block_count
    per block: u16 name_len, name (utf-8), u8 dtype, u8 ndim, u64[ndim] shape, payload
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ShapeError
from .types import EmbeddingDataset

DATASET_MAGIC = b"DPGE"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQQB")

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("u1")}
_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1, np.dtype("u1"): 2}

FORMATS = ("csv", "binary")


def guess_format(path) -> str:
    return "csv" if str(path).lower().endswith((".csv", ".txt")) else "binary"


def load_dataset(path, format=None, labels=False) -> EmbeddingDataset:
    """Load a dataset; ``labels`` says whether a CSV's last column holds labels.

    Binary files record label presence in their header, so ``labels`` is
    ignored for them.
    """
    format = format or guess_format(path)
    if format == "csv":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return parse_csv(fh.read(), labels=labels)
    if format == "binary":
        with open(path, "rb") as fh:
            return decode_binary(fh.read())
    raise ContractError(f"unknown dataset format {format!r}")


def save_dataset(ds: EmbeddingDataset, path, format=None) -> None:
    format = format or guess_format(path)
    if format == "csv":
        payload = format_csv(ds).encode("utf-8")
    elif format == "binary":
        payload = encode_binary(ds)
    else:
        raise ContractError(f"unknown dataset format {format!r}")
    Path(path).write_bytes(payload)


def parse_csv(text: str, labels=False) -> EmbeddingDataset:
    rows, label_values = [], []
    width = None
    for row_index, fields in enumerate(r for r in csv.reader(io.StringIO(text)) if r):
        if labels:
            if len(fields) < 2:
                raise ShapeError(f"row {row_index}: need at least one coordinate and a label")
            fields, label_field = fields[:-1], fields[-1].strip()
            try:
                label = int(label_field)
            except ValueError:
                raise ParseError(f"label {label_field!r} is not an integer", row_index) from None
            if label < 0:
                raise ParseError(f"label {label} is negative", row_index)
            label_values.append(label)
        try:
            values = [float(f) for f in fields]
        except ValueError as exc:
            raise ParseError(str(exc), row_index) from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", row_index)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ShapeError(f"row {row_index}: expected {width} coordinates, found {len(values)}")
        rows.append(values)
    if not rows or not width:
        raise ShapeError("dataset is empty")
    return EmbeddingDataset(np.array(rows, dtype=np.float64),
                            np.array(label_values, dtype=np.int64) if labels else None)


def format_csv(ds: EmbeddingDataset) -> str:
    out = io.StringIO()
    for i, row in enumerate(ds.data):
        fields = [repr(float(v)) for v in row]
        if ds.labels is not None:
            fields.append(str(int(ds.labels[i])))
        out.write(",".join(fields))
        out.write("\n")
    return out.getvalue()


def encode_binary(ds: EmbeddingDataset) -> bytes:
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, ds.n, ds.d, int(ds.has_labels))
    parts = [header, ds.data.astype("<f8").tobytes(order="C")]
    if ds.labels is not None:
        if ds.labels.max() > np.iinfo(np.uint32).max:
            raise ContractError("labels do not fit in u32")
        parts.append(ds.labels.astype("<u4").tobytes())
    return b"".join(parts)


def decode_binary(blob: bytes) -> EmbeddingDataset:
    if len(blob) < _HEADER.size:
        raise ShapeError("dataset is empty" if not blob else "truncated header")
    magic, version, n, d, has_labels = _HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise ParseError(f"unsupported version {version}")
    if n == 0 or d == 0:
        raise ShapeError(f"dataset has shape ({n}, {d})")
    expected = _HEADER.size + 8 * n * d + (4 * n if has_labels else 0)
    if len(blob) != expected:
        raise ParseError(f"expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(data).all(axis=1))
    if bad.size:
        raise ParseError("non-finite value", int(bad[0]))
    labels = None
    if has_labels:
        labels = np.frombuffer(blob, dtype="<u4", count=n, offset=_HEADER.size + 8 * n * d)
        labels = labels.astype(np.int64)
    return EmbeddingDataset(data.astype(np.float64), labels)


def split_by_label(ds: EmbeddingDataset):
    """Per-class datasets ``[(label, subset), ...]`` in ascending label order."""
    if ds.labels is None:
        raise ContractError("dataset has no labels")
    return [(int(label), ds.take(np.flatnonzero(ds.labels == label)))
            for label in np.unique(ds.labels)]


def write_blocks(path, magic: bytes, version: int, blocks: dict, meta=None) -> None:
    """Write named arrays (and an optional JSON ``meta`` dict) to a container."""
    if len(magic) != 4:
        raise ContractError("container magic must be 4 bytes")
    blocks = dict(blocks)
    if meta is not None:
        text = json.dumps(meta, sort_keys=True, separators=(",", ":"))
        blocks["__meta__"] = np.frombuffer(text.encode("utf-8"), dtype="u1")
    parts = [magic, struct.pack("<II", version, len(blocks))]
    for name, array in blocks.items():
        array = np.asarray(array)
        if array.dtype.kind == "f":
            array = array.astype("<f8")
        elif array.dtype.kind in "iu" and array.dtype != np.dtype("u1"):
            array = array.astype("<i8")
        code = _DTYPE_CODES[array.dtype]
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", code, array.ndim))
        parts.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        parts.append(np.ascontiguousarray(array).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_blocks(path, magic: bytes):
    """Return ``(version, blocks, meta)`` from a container written by write_blocks."""
    blob = Path(path).read_bytes()
    if blob[:4] != magic:
        raise ParseError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        offset = 12
        blocks = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            code, ndim = struct.unpack_from("<BB", blob, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, offset)
            offset += 8 * ndim
            dtype = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + size > len(blob):
                raise ParseError(f"block {name!r} is truncated")
            blocks[name] = np.frombuffer(blob, dtype=dtype, count=size // dtype.itemsize,
                                         offset=offset).reshape(shape).copy()
            offset += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise ParseError(f"corrupt container: {exc}") from None
    meta = None
    if "__meta__" in blocks:
        meta = json.loads(blocks.pop("__meta__").tobytes().decode("utf-8"))
    return version, blocks, meta
