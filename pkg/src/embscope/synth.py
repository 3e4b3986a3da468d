"""Synthetic data with planted ground truth.

``gen_planted_linear`` hides a sparse linear target in Gaussian
embeddings; ``gen_superposition`` builds embeddings as sparse nonnegative
combinations of more unit directions than dimensions.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import EmbeddingMatrix, TargetTable, validate_embedding_matrix
from .errors import ConfigError, DataError, DimensionMismatch
from .formats import write_embeddings


def _ids(prefix: str, n: int) -> list[str]:
    width = len(str(max(n - 1, 0)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


@dataclass(frozen=True)
class PlantedLinearSpec:
    """``y = X[:, support] @ true_weights + noise`` with i.i.d. N(0, 1) features.

    ``support`` and ``true_weights`` are drawn from ``seed`` when omitted
    (``s`` indices; magnitudes uniform in [1, 2] with random signs).
    ``feature_shift`` adds a constant offset to every feature, which moves
    the domain without changing the planted relation.
    """

    n: int
    d: int
    s: int = 8
    support: tuple[int, ...] | None = None
    true_weights: tuple[float, ...] | None = None
    noise_sigma: float = 0.0
    seed: int = 0
    feature_shift: float = 0.0
    id_prefix: str = "p"

    def resolved(self) -> "PlantedLinearSpec":
        """Spec with support and weights filled in."""
        if self.n < 2 or self.d < 1:
            raise ConfigError(f"need N >= 2 and D >= 1, got N={self.n}, D={self.d}")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        support, weights = self.support, self.true_weights
        rng = np.random.default_rng([self.seed, 1])
        if support is None:
            if not 0 <= self.s <= self.d:
                raise ConfigError(f"support size {self.s} outside [0, {self.d}]")
            support = tuple(sorted(int(j) for j in rng.choice(self.d, self.s, replace=False)))
        if len(set(support)) != len(support) or any(not 0 <= j < self.d for j in support):
            raise ConfigError("support must hold distinct indices in [0, D)")
        if weights is None:
            mag = rng.uniform(1.0, 2.0, len(support))
            sign = rng.choice([-1.0, 1.0], len(support))
            weights = tuple(float(v) for v in mag * sign)
        if len(weights) != len(support):
            raise ConfigError("true_weights and support differ in length")
        return replace(self, s=len(support), support=tuple(support), true_weights=tuple(weights))


def noise_for_snr(weights, snr: float) -> float:
    """Noise sigma giving ``Var(signal) / Var(noise) == snr`` for unit-variance features."""
    if snr <= 0:
        raise ConfigError("snr must be positive")
    return math.sqrt(float(np.sum(np.square(weights))) / snr)


@dataclass(frozen=True)
class PlantedTruth:
    support: tuple[int, ...]
    weights: tuple[float, ...]
    d: int

    def dense(self) -> np.ndarray:
        w = np.zeros(self.d)
        w[list(self.support)] = self.weights
        return w


def gen_planted_linear(spec: PlantedLinearSpec, target_name: str = "y"):
    """Returns ``(EmbeddingMatrix, TargetTable, PlantedTruth)``.

    The target is computed from the stored float32 features, so at zero
    noise it satisfies the planted equation to float64 rounding.
    """
    spec = spec.resolved()
    rng = np.random.default_rng([spec.seed, 2])
    X = rng.standard_normal((spec.n, spec.d)) + spec.feature_shift
    emb = validate_embedding_matrix(X, _ids(spec.id_prefix, spec.n))
    Xs = emb.as_float64()
    y = Xs[:, list(spec.support)] @ np.array(spec.true_weights, dtype=np.float64)
    if spec.noise_sigma > 0:
        y = y + spec.noise_sigma * rng.standard_normal(spec.n)
    targets = TargetTable(emb.ids, {target_name: y})
    return emb, targets, PlantedTruth(spec.support, spec.true_weights, spec.d)


def gen_domain_pair(spec: PlantedLinearSpec, noise_b: float, shift_b: float = 0.0, seed_b: int | None = None):
    """Two datasets sharing the planted axes but with their own features and noise.

    Returns ``((emb_a, tgt_a), (emb_b, tgt_b), truth)``.
    """
    spec = spec.resolved()
    spec_b = replace(spec, noise_sigma=noise_b, feature_shift=shift_b,
                     seed=spec.seed + 1 if seed_b is None else seed_b, id_prefix=spec.id_prefix + "b")
    ea, ta, truth = gen_planted_linear(spec)
    eb, tb, _ = gen_planted_linear(spec_b)
    return (ea, ta), (eb, tb), truth


def permute_dims(emb: EmbeddingMatrix, seed: int) -> EmbeddingMatrix:
    """Same rows with embedding columns shuffled (an adversarial transfer control)."""
    perm = np.random.default_rng(seed).permutation(emb.n_dims)
    return validate_embedding_matrix(emb.values[:, perm], emb.ids)


@dataclass(frozen=True)
class SuperpositionSpec:
    """``x = sum_k a_k dir_k + noise`` with K unit directions in D dimensions.

    Each ``a_k`` is nonzero with probability ``p`` and then drawn uniformly
    from ``[scale_low, scale_high]``; the expected number of active features
    per sample is ``p * K``.
    """

    d: int = 64
    k: int = 256
    p: float = 0.02
    n: int = 50_000
    scale_low: float = 0.0
    scale_high: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0
    id_prefix: str = "x"

    def validate(self) -> None:
        if self.d < 1 or self.k < 1 or self.n < 1:
            raise ConfigError("d, k and n must be positive")
        if not 0 < self.p <= 1:
            raise ConfigError("activation probability p must lie in (0, 1]")
        if not 0 <= self.scale_low <= self.scale_high or self.scale_high <= 0:
            raise ConfigError("need 0 <= scale_low <= scale_high with scale_high > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")


def random_directions(k: int, d: int, seed) -> np.ndarray:
    """K directions uniform on the unit sphere in D dimensions."""
    g = np.random.default_rng(seed).standard_normal((k, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def gen_superposition(spec: SuperpositionSpec = SuperpositionSpec(), return_codes: bool = False):
    """Returns ``(EmbeddingMatrix, directions)`` or, with ``return_codes``, also the K-column codes."""
    spec.validate()
    dirs = random_directions(spec.k, spec.d, [spec.seed, 3])
    rng = np.random.default_rng([spec.seed, 4])
    on = rng.random((spec.n, spec.k)) < spec.p
    codes = np.zeros((spec.n, spec.k))
    codes[on] = rng.uniform(spec.scale_low, spec.scale_high, int(on.sum()))
    X = codes @ dirs
    if spec.noise_sigma > 0:
        X = X + spec.noise_sigma * rng.standard_normal(X.shape)
    emb = validate_embedding_matrix(X, _ids(spec.id_prefix, spec.n))
    if return_codes:
        return emb, dirs, codes
    return emb, dirs


def dictionary_recovery_score(learned, truth, threshold: float = 0.9) -> tuple[float, float]:
    """Mean over truth directions of the best absolute cosine with any learned direction,
    and the fraction whose best cosine reaches ``threshold``."""
    learned = np.asarray(learned, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if learned.ndim != 2 or truth.ndim != 2 or learned.shape[1] != truth.shape[1]:
        raise DimensionMismatch(f"direction sets disagree on D: {learned.shape} vs {truth.shape}")
    ln = np.linalg.norm(learned, axis=1)
    if (ln == 0).any():
        raise DataError(f"learned direction {int(np.argmin(ln))} has zero norm")
    tn = np.linalg.norm(truth, axis=1)
    if (tn == 0).any():
        raise DataError("truth direction has zero norm")
    cos = np.abs((truth / tn[:, None]) @ (learned / ln[:, None]).T)
    best = cos.max(axis=1)
    return float(best.mean()), float(np.mean(best >= threshold))


def write_truth_manifest(path, spec, truth=None, directions=None, directions_path=None) -> dict:
    """JSON manifest echoing the spec plus ground truth.

    Planted-linear truth is inlined; superposition directions are written to
    ``directions_path`` in the binary embedding format and referenced.
    """
    doc = {"generator": type(spec).__name__, "spec": asdict(spec)}
    if truth is not None:
        doc["support"] = list(truth.support)
        doc["weights"] = list(truth.weights)
    if directions is not None:
        if directions_path is None:
            raise ConfigError("directions_path is required to store directions")
        write_embeddings(validate_embedding_matrix(directions, _ids("dir", len(directions))), directions_path, "bin")
        doc["directions_path"] = str(directions_path)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc
