"""Rank samples by activation along one dimension.

Orderings are total: by value, then by sample id (ascending) to break ties.
Reports carry ids and values only; joining ids to images happens downstream.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import EmbeddingMatrix
from .errors import ConfigError, DataError

SOURCES = ("embedding", "sae_feature")


@dataclass(frozen=True)
class ActivationReport:
    dim: int
    source: str
    sample_count: int
    low: tuple[tuple[str, float], ...] = ()
    high: tuple[tuple[str, float], ...] = ()
    low_threshold: float | None = None
    high_threshold: float | None = None
    params: dict = field(default_factory=dict)

    @property
    def low_ids(self) -> list[str]:
        return [sid for sid, _ in self.low]

    @property
    def high_ids(self) -> list[str]:
        return [sid for sid, _ in self.high]

    def to_json(self) -> str:
        doc = {
            "dim": self.dim,
            "source": self.source,
            "sample_count": self.sample_count,
            "low_threshold": self.low_threshold,
            "high_threshold": self.high_threshold,
            "low": [[sid, v] for sid, v in self.low],
            "high": [[sid, v] for sid, v in self.high],
            "params": self.params,
        }
        return json.dumps(doc, sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "ActivationReport":
        doc = json.loads(line)
        return cls(
            dim=doc["dim"], source=doc["source"], sample_count=doc["sample_count"],
            low=tuple((sid, float(v)) for sid, v in doc["low"]),
            high=tuple((sid, float(v)) for sid, v in doc["high"]),
            low_threshold=doc["low_threshold"], high_threshold=doc["high_threshold"],
            params=doc.get("params", {}),
        )


def _column(acts: EmbeddingMatrix, dim: int, source: str):
    if source not in SOURCES:
        raise ConfigError(f"source must be one of {SOURCES}, got {source!r}")
    if not 0 <= dim < acts.n_dims:
        raise ConfigError(f"dimension {dim} out of range [0, {acts.n_dims})")
    return np.asarray(acts.values[:, dim], dtype=np.float64), np.array(acts.ids)


def _ascending(values, ids):
    return np.lexsort((ids, values))


def _descending(values, ids):
    return np.lexsort((ids, -values))


def tail_size(pct: float, n: int) -> int:
    return max(1, int(math.floor(pct / 100.0 * n)))


def percentile_extremes(acts: EmbeddingMatrix, dim: int, low_pct: float = 5.0, high_pct: float = 5.0,
                        sample_k: int = 3, seed: int = 0, source: str = "embedding") -> ActivationReport:
    """Sample ``sample_k`` ids uniformly from each activation tail of one dimension.

    A tail holds ``max(1, floor(pct/100 * N))`` samples by rank. Sampled ids
    are listed in rank order (low ascending, high descending).
    """
    if not (0 < low_pct < 50 and 0 < high_pct < 50):
        raise ConfigError("percentiles must lie strictly between 0 and 50")
    if sample_k < 1:
        raise ConfigError("sample_k must be at least 1")
    values, ids = _column(acts, dim, source)
    n = values.size
    n_low, n_high = tail_size(low_pct, n), tail_size(high_pct, n)
    if n_low < sample_k or n_high < sample_k:
        raise DataError(f"tail of {min(n_low, n_high)} samples is smaller than sample_k={sample_k}")
    low_tail = _ascending(values, ids)[:n_low]
    high_tail = _descending(values, ids)[:n_high]
    low_thr = float(values[low_tail[-1]])
    high_thr = float(values[high_tail[-1]])
    if low_thr >= high_thr:
        raise DataError(f"dimension {dim}: low and high tails overlap (degenerate activation distribution)")
    rng = np.random.default_rng(seed)
    pick_low = np.sort(rng.choice(n_low, sample_k, replace=False))
    pick_high = np.sort(rng.choice(n_high, sample_k, replace=False))
    return ActivationReport(
        dim=dim, source=source, sample_count=n,
        low=tuple((str(ids[i]), float(values[i])) for i in low_tail[pick_low]),
        high=tuple((str(ids[i]), float(values[i])) for i in high_tail[pick_high]),
        low_threshold=low_thr, high_threshold=high_thr,
        params={"mode": "percentile", "low_pct": low_pct, "high_pct": high_pct,
                "sample_k": sample_k, "seed": seed},
    )


def top_k_activations(acts: EmbeddingMatrix, dim: int, k: int = 16, source: str = "embedding") -> ActivationReport:
    """Exact top-``k`` samples of one dimension, highest first."""
    values, ids = _column(acts, dim, source)
    if not 1 <= k <= values.size:
        raise ConfigError(f"k must lie in [1, {values.size}], got {k}")
    top = _descending(values, ids)[:k]
    return ActivationReport(
        dim=dim, source=source, sample_count=values.size,
        high=tuple((str(ids[i]), float(values[i])) for i in top),
        high_threshold=float(values[top[-1]]),
        params={"mode": "top_k", "k": k},
    )


def parse_dims(spec: str, n_dims: int) -> list[int]:
    """``"all"`` or a comma list with optional ranges, e.g. ``"0,5,10-12"``."""
    if spec.strip() == "all":
        return list(range(n_dims))
    dims = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            dims.extend(range(int(a), int(b) + 1))
        else:
            dims.append(int(part))
    for d in dims:
        if not 0 <= d < n_dims:
            raise ConfigError(f"dimension {d} out of range [0, {n_dims})")
    return dims


def emit_report(reports: Iterable[ActivationReport], path) -> None:
    """Write one JSON object per report, one per line."""
    reports = list(reports)
    if not reports:
        raise ConfigError("no reports to write")
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")


def read_report(path) -> list[ActivationReport]:
    text = Path(path).read_text(encoding="utf-8")
    return [ActivationReport.from_json(line) for line in text.splitlines() if line.strip()]
