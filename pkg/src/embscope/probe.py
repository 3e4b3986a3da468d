"""L1/L2 linear probes from embedding dimensions to scalar targets.

Objective convention (lasso)::

    (1 / 2N) * ||y_c - Z w||^2 + alpha * ||w||_1

where ``Z`` is the standardised design (zero mean, unit population std per
column) and ``y_c`` the mean-centred target. The ridge probe replaces the
penalty with ``alpha * ||w||^2``. Because both terms are per-sample
averages, ``alpha`` does not scale with the number of rows. Reported
sparsity depends on this convention.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .data import EmbeddingMatrix, SplitSpec, TargetTable, split_train_test
from .errors import ConfigError, DataError, DimensionMismatch, NumericError
from .formats import ModelArtifact

soft_threshold = _kernels.soft_threshold


@dataclass(frozen=True)
class CDConfig:
    tol: float = 1e-6
    max_sweeps: int = 1000


@dataclass(eq=False)
class LinearProbe:
    """Fitted probe. Predicts ``target_mean + bias + sum_j w_j (x_j - mean_j) / std_j``."""

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    target_mean: float
    reg_kind: str
    reg_alpha: float
    target_name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_dims(self) -> int:
        return self.weights.shape[0]

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))

    def to_artifact(self) -> ModelArtifact:
        return ModelArtifact(
            kind="probe",
            arrays={
                "weights": np.asarray(self.weights, dtype=np.float64),
                "feature_means": np.asarray(self.feature_means, dtype=np.float64),
                "feature_stds": np.asarray(self.feature_stds, dtype=np.float64),
            },
            meta={
                "bias": float(self.bias),
                "target_mean": float(self.target_mean),
                "reg_kind": self.reg_kind,
                "reg_alpha": float(self.reg_alpha),
                "target_name": self.target_name,
                "fit": self.meta,
            },
        )

    @classmethod
    def from_artifact(cls, art: ModelArtifact) -> "LinearProbe":
        if art.kind != "probe":
            raise DataError(f"expected a probe artifact, got {art.kind!r}")
        m = art.meta
        return cls(
            weights=art.arrays["weights"],
            bias=m["bias"],
            feature_means=art.arrays["feature_means"],
            feature_stds=art.arrays["feature_stds"],
            target_mean=m["target_mean"],
            reg_kind=m["reg_kind"],
            reg_alpha=m["reg_alpha"],
            target_name=m["target_name"],
            meta=dict(m.get("fit", {})),
        )

    def __eq__(self, other):
        if not isinstance(other, LinearProbe):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.feature_means, other.feature_means)
            and np.array_equal(self.feature_stds, other.feature_stds)
            and (self.bias, self.target_mean, self.reg_kind, self.reg_alpha, self.target_name)
            == (other.bias, other.target_mean, other.reg_kind, other.reg_alpha, other.target_name)
        )


@dataclass(frozen=True)
class ProbeReport:
    target_name: str
    pearson_r_test: float
    n_nonzero: int
    n_dims: int
    n_train: int
    n_test: int
    seed: int | None
    reg_kind: str
    reg_alpha: float
    constant_prediction: bool = False

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ProbeReport":
        raw = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(
            target_name=raw["target_name"],
            pearson_r_test=float(raw["pearson_r_test"]),
            n_nonzero=int(raw["n_nonzero"]),
            n_dims=int(raw["n_dims"]),
            n_train=int(raw["n_train"]),
            n_test=int(raw["n_test"]),
            seed=None if raw["seed"] == "None" else int(raw["seed"]),
            reg_kind=raw["reg_kind"],
            reg_alpha=float(raw["reg_alpha"]),
            constant_prediction=raw.get("constant_prediction") == "True",
        )


def _as_array(X) -> np.ndarray:
    if isinstance(X, EmbeddingMatrix):
        return X.as_float64()
    return np.asarray(X, dtype=np.float64)


def _standardize(X, y):
    X = _as_array(X)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"design must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} targets")
    if X.shape[0] < 2:
        raise DataError(f"need at least 2 training rows, got {X.shape[0]}")
    if not np.isfinite(y).all():
        raise DataError("training targets must be finite (drop missing rows first)")
    if np.ptp(y) == 0.0:
        raise DataError("target has no variation on the training rows")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    constant = np.ptp(X, axis=0) == 0.0
    stds[constant] = 1.0
    Z = (X - means) / stds
    Z[:, constant] = 0.0
    y_mean = float(y.mean())
    return Z, y - y_mean, means, stds, y_mean, constant


def _check_alpha(alpha):
    if not np.isfinite(alpha) or alpha < 0:
        raise ConfigError(f"alpha must be a finite non-negative number, got {alpha}")


def fit_lasso(X, y, alpha: float = 0.1, config: CDConfig = CDConfig(), target_name: str = "") -> LinearProbe:
    """L1 probe by cyclic coordinate descent with covariance updates.

    The Gram matrix ``Z'Z / N`` is formed once; each coordinate step then
    costs O(D). Converges when the largest coordinate change in a sweep
    drops below ``config.tol``; stops after ``config.max_sweeps`` otherwise.
    Weights clamped by the soft threshold are exact zeros.
    """
    _check_alpha(alpha)
    Z, yc, means, stds, y_mean, constant = _standardize(X, y)
    n = Z.shape[0]
    gram = np.ascontiguousarray(Z.T @ Z / n)
    corr = np.ascontiguousarray(Z.T @ yc / n)
    w = np.zeros(Z.shape[1])
    sweeps, last_delta = _kernels.cd_gram(gram, corr, float(alpha), w, float(config.tol), int(config.max_sweeps))
    if not np.isfinite(w).all():
        raise NumericError("coordinate descent produced non-finite weights")
    w[constant] = 0.0
    return LinearProbe(
        weights=w, bias=0.0, feature_means=means, feature_stds=stds, target_mean=y_mean,
        reg_kind="L1", reg_alpha=float(alpha), target_name=target_name,
        meta={"n_train": n, "n_sweeps": int(sweeps), "converged": bool(last_delta < config.tol),
              "tol": config.tol, "max_sweeps": config.max_sweeps, "backend": _kernels.BACKEND},
    )


def fit_ridge(X, y, alpha: float = 0.1, target_name: str = "") -> LinearProbe:
    """L2 probe in closed form: solves ``(Z'Z + 2 N alpha I) w = Z'y_c``."""
    _check_alpha(alpha)
    Z, yc, means, stds, y_mean, constant = _standardize(X, y)
    n = Z.shape[0]
    keep = ~constant
    w = np.zeros(Z.shape[1])
    if keep.any():
        Zk = Z[:, keep]
        lhs = Zk.T @ Zk + 2.0 * n * alpha * np.eye(Zk.shape[1])
        try:
            w[keep] = np.linalg.solve(lhs, Zk.T @ yc)
        except np.linalg.LinAlgError:
            raise NumericError("ridge system is singular; use alpha > 0 or a full-rank design") from None
    return LinearProbe(
        weights=w, bias=0.0, feature_means=means, feature_stds=stds, target_mean=y_mean,
        reg_kind="L2", reg_alpha=float(alpha), target_name=target_name, meta={"n_train": n},
    )


def fit_probe(X, y, reg_kind: str = "L1", alpha: float = 0.1, target_name: str = "",
              config: CDConfig = CDConfig()) -> LinearProbe:
    kind = reg_kind.upper()
    if kind == "L1":
        return fit_lasso(X, y, alpha, config, target_name)
    if kind == "L2":
        return fit_ridge(X, y, alpha, target_name)
    raise ConfigError(f"unknown regularisation {reg_kind!r}; use L1 or L2")


def predict(probe: LinearProbe, X) -> np.ndarray:
    X = _as_array(X)
    if X.ndim != 2 or X.shape[1] != probe.n_dims:
        raise DimensionMismatch(f"probe expects {probe.n_dims} dimensions, got {X.shape[-1]}")
    Z = (X - probe.feature_means) / probe.feature_stds
    return probe.target_mean + probe.bias + Z @ probe.weights


def pearson_r(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"pearson_r needs equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise DataError("pearson_r needs at least 2 points")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise DataError("pearson_r inputs must be finite")
    da = a - a.mean()
    db = b - b.mean()
    sa = np.sqrt(da @ da)
    sb = np.sqrt(db @ db)
    if sa == 0.0 or sb == 0.0:
        raise DataError("pearson_r is undefined for a zero-variance vector")
    r = float((da @ db) / (sa * sb))
    return max(-1.0, min(1.0, r))


def _score(actual, pred) -> tuple[float, bool]:
    """Pearson r, or 0.0 when the probe predicts a constant (e.g. all weights zero)."""
    if np.ptp(pred) == 0.0:
        return 0.0, True
    return pearson_r(actual, pred), False


def _usable(embeddings: EmbeddingMatrix, targets: TargetTable, target_name: str):
    """Ids present in both inputs with a non-missing target, in embedding order."""
    present = targets.present(target_name)
    ids = [sid for sid in embeddings.ids if sid in present]
    return ids, present


def probe_experiment(embeddings: EmbeddingMatrix, targets: TargetTable, target_name: str,
                     reg_kind: str = "L1", alpha: float = 0.1, split: SplitSpec = SplitSpec(),
                     config: CDConfig = CDConfig()) -> tuple[ProbeReport, LinearProbe]:
    """Fit on the train split of one target and report test Pearson r.

    Rows with a missing value for this target are dropped before splitting.
    A probe with no nonzero weight predicts a constant; its r is reported
    as 0.0 with ``constant_prediction`` set.
    """
    ids, present = _usable(embeddings, targets, target_name)
    train, test = split_train_test(ids, split)
    X = embeddings.take(train)
    y = np.array([present[s] for s in train])
    probe = fit_probe(X, y, reg_kind, alpha, target_name, config)
    probe.meta["seed"] = split.seed
    probe.meta["test_fraction"] = split.test_fraction
    pred = predict(probe, embeddings.take(test))
    actual = np.array([present[s] for s in test])
    r, constant = _score(actual, pred)
    report = ProbeReport(
        target_name=target_name, pearson_r_test=r,
        n_nonzero=probe.n_nonzero, n_dims=probe.n_dims, n_train=len(train), n_test=len(test),
        seed=split.seed, reg_kind=probe.reg_kind, reg_alpha=probe.reg_alpha, constant_prediction=constant,
    )
    return report, probe


def cross_domain_eval(probe: LinearProbe, embeddings: EmbeddingMatrix, targets: TargetTable,
                      target_name: str | None = None) -> ProbeReport:
    """Score a frozen probe on another dataset, keeping its own standardisation."""
    name = target_name or probe.target_name
    if embeddings.n_dims != probe.n_dims:
        raise DimensionMismatch(f"probe expects {probe.n_dims} dimensions, domain has {embeddings.n_dims}")
    ids, present = _usable(embeddings, targets, name)
    if len(ids) < 2:
        raise DataError(f"fewer than 2 usable rows for target {name!r}")
    pred = predict(probe, embeddings.take(ids))
    actual = np.array([present[s] for s in ids])
    r, constant = _score(actual, pred)
    return ProbeReport(
        target_name=name, pearson_r_test=r, n_nonzero=probe.n_nonzero,
        n_dims=probe.n_dims, n_train=int(probe.meta.get("n_train", 0)), n_test=len(ids),
        seed=probe.meta.get("seed"), reg_kind=probe.reg_kind, reg_alpha=probe.reg_alpha,
        constant_prediction=constant,
    )


def top_coefficients(probe: LinearProbe, k: int) -> list[tuple[int, float]]:
    """The ``k`` largest weights by magnitude; ties go to the lower index."""
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    w = np.asarray(probe.weights, dtype=np.float64)
    order = np.lexsort((np.arange(w.size), -np.abs(w)))[:k]
    return [(int(j), float(w[j])) for j in order]


def kkt_residual(probe: LinearProbe, X, y) -> float:
    """Largest violation of the lasso subgradient conditions, in standardised units."""
    X = _as_array(X)
    y = np.asarray(y, dtype=np.float64)
    Z = (X - probe.feature_means) / probe.feature_stds
    r = (y - probe.target_mean) - Z @ probe.weights
    grad = Z.T @ r / X.shape[0]
    w = probe.weights
    alpha = probe.reg_alpha
    active = w != 0
    viol = np.zeros_like(w)
    viol[active] = np.abs(grad[active] - alpha * np.sign(w[active]))
    viol[~active] = np.maximum(np.abs(grad[~active]) - alpha, 0.0)
    return float(viol.max())
