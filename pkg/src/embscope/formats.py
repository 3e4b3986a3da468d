"""Readers and writers for embeddings, target tables and fitted models.

Binary embedding layout (all little-endian)::

    0-3    b"EMBD"
    4-7    version (u32, = 1)
    8-15   n_rows (u64)
    16-19  n_dims (u32)
    ...    n_rows ids, each a u16 byte length followed by UTF-8 bytes
    ...    n_rows * n_dims float32, row-major

Model artifacts use ``b"EMDL"``, a u32 format version, a u32-length JSON
metadata block and a sequence of named little-endian arrays.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import EmbeddingMatrix, TargetTable, validate_embedding_matrix
from .errors import DataError, FormatError

EMBED_MAGIC = b"EMBD"
EMBED_VERSION = 1
MODEL_MAGIC = b"EMDL"
MODEL_FORMAT_VERSION = 1
MODEL_KINDS = ("probe", "sae")

_HEADER = struct.Struct("<4sIQI")
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def infer_format(path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "bin"


# -- embeddings ---------------------------------------------------------------

def write_embeddings(matrix: EmbeddingMatrix, path, format: str | None = None) -> None:
    """Write ``matrix`` as ``bin`` or ``csv`` (inferred from the suffix by default).

    The binary layout has no room for dimension labels; only CSV keeps them.
    """
    fmt = format or infer_format(path)
    matrix = validate_embedding_matrix(matrix.values, matrix.ids, matrix.dim_labels)
    if fmt == "bin":
        Path(path).write_bytes(_encode_embeddings(matrix))
    elif fmt == "csv":
        labels = matrix.dim_labels or tuple(f"e{j}" for j in range(matrix.n_dims))
        if any("\x00" in sid for sid in matrix.ids):
            raise FormatError("CSV cannot store sample ids containing NUL; use the binary format")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("id",) + labels)
            for sid, row in zip(matrix.ids, matrix.values):
                # 9 significant digits round-trip any float32 exactly
                writer.writerow([sid] + [f"{v:.9g}" for v in row.tolist()])
    else:
        raise FormatError(f"unknown embedding format {fmt!r}")


def _encode_embeddings(matrix: EmbeddingMatrix) -> bytes:
    buf = io.BytesIO()
    buf.write(_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, matrix.n_rows, matrix.n_dims))
    for sid in matrix.ids:
        raw = sid.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"sample id longer than 65535 bytes: {sid[:32]!r}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    buf.write(np.ascontiguousarray(matrix.values, dtype="<f4").tobytes())
    return buf.getvalue()


def read_embeddings(path, format: str | None = None) -> EmbeddingMatrix:
    fmt = format or infer_format(path)
    if fmt == "bin":
        return _decode_embeddings(Path(path).read_bytes())
    if fmt == "csv":
        return _read_embeddings_csv(path)
    raise FormatError(f"unknown embedding format {fmt!r}")


def _decode_embeddings(blob: bytes) -> EmbeddingMatrix:
    if len(blob) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, n_rows, n_dims = _HEADER.unpack_from(blob, 0)
    if magic != EMBED_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {EMBED_MAGIC!r}")
    if version != EMBED_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    pos = _HEADER.size
    ids = []
    for _ in range(n_rows):
        if pos + 2 > len(blob):
            raise FormatError("truncated id block")
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + n > len(blob):
            raise FormatError("truncated id block")
        ids.append(blob[pos:pos + n].decode("utf-8"))
        pos += n
    expected = n_rows * n_dims * 4
    if len(blob) - pos != expected:
        what = "truncated" if len(blob) - pos < expected else "oversized"
        raise FormatError(f"{what} payload: {len(blob) - pos} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f4", count=n_rows * n_dims, offset=pos)
    return validate_embedding_matrix(values.reshape(n_rows, n_dims), ids)


def _read_embeddings_csv(path) -> EmbeddingMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise FormatError("embedding CSV must start with an 'id' header column")
        labels = header[1:]
        if not labels:
            raise FormatError("embedding CSV has no dimension columns")
        ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise FormatError(f"line {lineno}: {len(rec) - 1} values, header declares {len(labels)}")
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError:
                raise FormatError(f"line {lineno}: non-numeric embedding value") from None
            ids.append(rec[0])
    if not rows:
        raise FormatError("embedding CSV has no data rows")
    generic = all(lab == f"e{j}" for j, lab in enumerate(labels))
    return validate_embedding_matrix(np.array(rows), ids, None if generic else labels)


# -- targets --------------------------------------------------------------------

def read_targets(path) -> TargetTable:
    """Read a targets CSV. Empty cells are missing; other non-numeric cells are errors."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise FormatError("targets CSV must have 'id' as its first column")
        names = header[1:]
        if not names:
            raise FormatError("targets CSV has no target columns")
        if len(set(names)) != len(names):
            raise FormatError("duplicate target column names")
        ids, cols = [], [[] for _ in names]
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise FormatError(f"line {lineno}: expected {len(header)} cells, got {len(rec)}")
            ids.append(rec[0])
            for j, cell in enumerate(rec[1:]):
                cell = cell.strip()
                if cell == "":
                    cols[j].append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise FormatError(f"line {lineno}: non-numeric value {cell!r} in column {names[j]!r}") from None
                if not math.isfinite(v):
                    raise FormatError(f"line {lineno}: non-finite value in column {names[j]!r}")
                cols[j].append(v)
    columns = {name: np.array(col, dtype=np.float64) for name, col in zip(names, cols)}
    return TargetTable(tuple(ids), columns)


def write_targets(table: TargetTable, path) -> None:
    names = table.names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + names)
        for i, sid in enumerate(table.ids):
            row = [sid]
            for name in names:
                row.append("" if table.missing[name][i] else repr(float(table.columns[name][i])))
            writer.writerow(row)


# -- model artifacts --------------------------------------------------------------

@dataclass
class ModelArtifact:
    """Serialisable fitted model: named arrays plus JSON metadata."""

    kind: str
    arrays: dict[str, np.ndarray]
    meta: dict[str, Any] = field(default_factory=dict)
    format_version: int = MODEL_FORMAT_VERSION

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise FormatError(f"unknown model kind {self.kind!r}")


def save_model(artifact: ModelArtifact, path) -> None:
    meta = json.dumps({"kind": artifact.kind, "meta": artifact.meta}, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(struct.pack("<4sII", MODEL_MAGIC, artifact.format_version, len(meta)))
    buf.write(meta)
    buf.write(struct.pack("<I", len(artifact.arrays)))
    for name, arr in artifact.arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise FormatError(f"array {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_model(path, kind: str | None = None) -> ModelArtifact:
    """Load an artifact; if ``kind`` is given, a different stored kind is an error."""
    blob = Path(path).read_bytes()
    try:
        magic, version, meta_len = struct.unpack_from("<4sII", blob, 0)
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad model magic {magic!r}")
        if version != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model format version {version}")
        pos = 12
        header = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
            pos += 8 * ndim
            dt = _DTYPES.get(code)
            if dt is None:
                raise FormatError(f"array {name!r}: unknown dtype code {code}")
            size = int(np.prod(shape, dtype=np.int64))
            if pos + size * dt.itemsize > len(blob):
                raise FormatError(f"array {name!r}: truncated payload")
            arrays[name] = np.frombuffer(blob, dtype=dt, count=size, offset=pos).reshape(shape).copy()
            pos += size * dt.itemsize
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt model file: {exc}") from None
    if pos != len(blob):
        raise FormatError("trailing bytes after model payload")
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"model file holds a {header['kind']!r} model, expected {kind!r}")
    return ModelArtifact(kind=header["kind"], arrays=arrays, meta=header["meta"], format_version=version)
