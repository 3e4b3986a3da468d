"""In-memory data model shared by every other module."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError

# Canonical storage dtype for embeddings; matches the binary file payload.
STORAGE_DTYPE = np.float32


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """N x D activations with one unique id per row.

    Build through :func:`validate_embedding_matrix`; values are stored as
    float32 and marked read-only.
    """

    ids: tuple[str, ...]
    values: np.ndarray
    dim_labels: tuple[str, ...] | None = None

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_dims(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def index_of(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}

    def take(self, ids: Sequence[str]) -> "EmbeddingMatrix":
        """Sub-matrix for ``ids`` in the given order."""
        lookup = self.index_of()
        try:
            rows = [lookup[sid] for sid in ids]
        except KeyError as exc:
            raise DataError(f"unknown sample id {exc.args[0]!r}") from None
        return validate_embedding_matrix(self.values[rows], list(ids), self.dim_labels)

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.dim_labels == other.dim_labels
            and self.values.shape == other.values.shape
            and self.values.dtype == other.values.dtype
            and self.values.tobytes() == other.values.tobytes()
        )


def validate_embedding_matrix(
    values, ids: Sequence[str], dim_labels: Sequence[str] | None = None
) -> EmbeddingMatrix:
    """Check a candidate matrix and wrap it as an :class:`EmbeddingMatrix`.

    Raises :class:`DataError` on ragged rows, an empty dimension, duplicate
    ids, or a non-finite entry (reporting its row and column).
    """
    if isinstance(values, np.ndarray):
        arr = values
    else:
        rows = list(values)
        widths = {len(r) for r in rows}
        if len(widths) > 1:
            for i, r in enumerate(rows):
                if len(r) != len(rows[0]):
                    raise DataError(f"ragged rows: row {i} has {len(r)} values, expected {len(rows[0])}")
        arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"embedding values must be 2-D, got shape {arr.shape}")
    n, d = arr.shape
    if n < 1 or d < 1:
        raise DataError(f"embedding matrix must be at least 1x1, got {n}x{d}")
    ids = tuple(str(s) for s in ids)
    if len(ids) != n:
        raise DataError(f"{len(ids)} ids for {n} rows")
    if len(set(ids)) != n:
        seen = set()
        for sid in ids:
            if sid in seen:
                raise DataError(f"duplicate sample id {sid!r}")
            seen.add(sid)
    arr = np.array(arr, dtype=STORAGE_DTYPE, order="C")
    finite = np.isfinite(arr)
    if not finite.all():
        r, c = np.argwhere(~finite)[0]
        raise DataError(f"non-finite value at row {r}, column {c}")
    if dim_labels is not None:
        dim_labels = tuple(str(s) for s in dim_labels)
        if len(dim_labels) != d:
            raise DataError(f"{len(dim_labels)} dimension labels for {d} columns")
    arr.flags.writeable = False
    return EmbeddingMatrix(ids=ids, values=arr, dim_labels=dim_labels)


@dataclass(frozen=True, eq=False)
class TargetTable:
    """Named per-sample scalar targets with an explicit missing-value mask.

    Missing entries hold NaN in ``columns`` and True in ``missing``.
    """

    ids: tuple[str, ...]
    columns: Mapping[str, np.ndarray]
    missing: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise DataError("duplicate sample id in target table")
        cols, masks = {}, {}
        for name, col in self.columns.items():
            col = np.array(col, dtype=np.float64)
            if col.shape != (n,):
                raise DataError(f"target column {name!r} has length {col.size}, expected {n}")
            mask = self.missing.get(name)
            mask = np.isnan(col) if mask is None else np.array(mask, dtype=bool)
            if not np.isfinite(col[~mask]).all():
                raise DataError(f"non-finite value in target column {name!r}")
            col[mask] = np.nan
            col.flags.writeable = False
            mask.flags.writeable = False
            cols[name], masks[name] = col, mask
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "missing", masks)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise DataError(f"no target column {name!r}; available: {', '.join(self.columns)}")
        return self.columns[name]

    def present(self, name: str) -> dict[str, float]:
        """Non-missing values of one target, keyed by sample id."""
        col = self.column(name)
        mask = self.missing[name]
        return {sid: float(v) for sid, v, m in zip(self.ids, col, mask) if not m}

    def with_columns(self, new: Mapping[str, np.ndarray]) -> "TargetTable":
        cols = dict(self.columns)
        masks = dict(self.missing)
        for name, col in new.items():
            if name in cols:
                raise DataError(f"target column {name!r} already exists")
            cols[name] = col
            masks[name] = np.isnan(np.asarray(col, dtype=np.float64))
        return TargetTable(self.ids, cols, masks)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TargetTable):
            return NotImplemented
        if self.ids != other.ids or list(self.columns) != list(other.columns):
            return False
        return all(
            np.array_equal(self.missing[k], other.missing[k])
            and np.array_equal(self.columns[k], other.columns[k], equal_nan=True)
            for k in self.columns
        )


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed}")


def split_train_test(ids: Sequence[str], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Seeded shuffle followed by a prefix split.

    The test set is the first ``round(test_fraction * N)`` ids of the
    shuffled order. The permutation comes from ``numpy.random.default_rng``
    (PCG64), so it is stable across processes and platforms.
    """
    ids = list(ids)
    n = len(ids)
    if n < 2:
        raise DataError(f"need at least 2 ids to split, got {n}")
    n_test = int(round(spec.test_fraction * n))
    if n_test == 0 or n_test == n:
        part = "test" if n_test == 0 else "train"
        raise DataError(f"test_fraction {spec.test_fraction} with {n} ids leaves an empty {part} set")
    order = np.random.default_rng(spec.seed).permutation(n)
    test = [ids[i] for i in order[:n_test]]
    train = [ids[i] for i in order[n_test:]]
    return train, test


def encode_orientation(theta_degrees) -> tuple[np.ndarray, np.ndarray]:
    """Map angles in degrees to (cos, sin) so 0 and 180 degrees stay continuous."""
    theta = np.asarray(theta_degrees, dtype=np.float64)
    if not np.isfinite(theta).all():
        raise DataError("orientation angles must be finite")
    rad = theta * (math.pi / 180.0)
    return np.cos(rad), np.sin(rad)


def add_orientation_columns(table: TargetTable, source: str, prefix: str | None = None) -> TargetTable:
    """Append ``<prefix>_cos`` and ``<prefix>_sin`` columns derived from an angle column.

    Missing angles stay missing in both derived columns.
    """
    prefix = prefix or source
    col = table.column(source)
    mask = table.missing[source]
    cos = np.full(col.shape, np.nan)
    sin = np.full(col.shape, np.nan)
    cos[~mask], sin[~mask] = encode_orientation(col[~mask])
    return table.with_columns({f"{prefix}_cos": cos, f"{prefix}_sin": sin})
