"""One-hidden-layer sparse autoencoder trained with numpy.

Forward map for a batch ``X`` (B x D)::

    F    = relu((X - b_dec) @ W_enc + b_enc)      # B x H
    Xhat = F @ W_dec + b_dec                      # B x D

Loss::

    mean_i ||x_i - xhat_i||^2  +  lam * mean_i ||f_i||_1
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import EmbeddingMatrix, validate_embedding_matrix
from .errors import ConfigError, DataError, DimensionMismatch, NumericError
from .formats import ModelArtifact

PARAM_NAMES = ("W_enc", "b_enc", "W_dec", "b_dec")


@dataclass(eq=False)
class SaeModel:
    W_enc: np.ndarray  # D x H
    b_enc: np.ndarray  # H
    W_dec: np.ndarray  # H x D, one feature direction per row
    b_dec: np.ndarray  # D
    expansion: int
    lam: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.W_enc.shape[0]

    @property
    def h(self) -> int:
        return self.W_enc.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, **params) -> "SaeModel":
        p = self.params()
        p.update(params)
        return SaeModel(**p, expansion=self.expansion, lam=self.lam, meta=dict(self.meta))

    def astype(self, dtype) -> "SaeModel":
        return self.replace(**{k: v.astype(dtype) for k, v in self.params().items()})

    def to_artifact(self) -> ModelArtifact:
        return ModelArtifact(
            kind="sae",
            arrays={k: np.asarray(v) for k, v in self.params().items()},
            meta={"expansion": self.expansion, "lambda": float(self.lam), "train": self.meta},
        )

    @classmethod
    def from_artifact(cls, art: ModelArtifact) -> "SaeModel":
        if art.kind != "sae":
            raise DataError(f"expected an sae artifact, got {art.kind!r}")
        return cls(**{k: art.arrays[k] for k in PARAM_NAMES}, expansion=int(art.meta["expansion"]),
                   lam=float(art.meta["lambda"]), meta=dict(art.meta.get("train", {})))

    def __eq__(self, other):
        if not isinstance(other, SaeModel):
            return NotImplemented
        return (self.expansion, self.lam) == (other.expansion, other.lam) and all(
            a.dtype == b.dtype and np.array_equal(a, b)
            for a, b in zip(self.params().values(), other.params().values())
        )


def _normalize_rows(W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    return W / np.where(norms > 0, norms, 1)


def sae_init(d: int, expansion: int, seed: int = 0, dtype=np.float32) -> SaeModel:
    """Seeded uniform(-1/sqrt(D), 1/sqrt(D)) weights, zero biases, unit decoder rows."""
    if d < 1 or expansion < 1:
        raise ConfigError(f"need D >= 1 and expansion >= 1, got D={d}, expansion={expansion}")
    h = expansion * d
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(d)
    W_enc = rng.uniform(-bound, bound, size=(d, h))
    W_dec = _normalize_rows(rng.uniform(-bound, bound, size=(h, d)))
    return SaeModel(
        W_enc=W_enc.astype(dtype), b_enc=np.zeros(h, dtype=dtype),
        W_dec=W_dec.astype(dtype), b_dec=np.zeros(d, dtype=dtype), expansion=expansion,
    )


def _batch(model: SaeModel, X) -> np.ndarray:
    if isinstance(X, EmbeddingMatrix):
        X = X.values
    X = np.asarray(X, dtype=model.W_enc.dtype)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DimensionMismatch(f"model expects {model.d} dimensions, got {X.shape[-1]}")
    return X


def sae_forward(model: SaeModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = _batch(model, X)
    F = np.maximum((X - model.b_dec) @ model.W_enc + model.b_enc, 0)
    return F, F @ model.W_dec + model.b_dec


def _check_lam(lam):
    if not lam >= 0:
        raise ConfigError(f"lambda must be non-negative, got {lam}")


def sae_loss(model: SaeModel, X, lam: float) -> tuple[float, float, float]:
    """Return ``(total, recon_term, l1_term)`` with ``total == recon_term + l1_term``."""
    _check_lam(lam)
    X = _batch(model, X)
    F, Xhat = sae_forward(model, X)
    n = X.shape[0]
    recon = float(np.sum((X - Xhat) ** 2, dtype=np.float64) / n)
    l1 = float(lam * np.sum(F, dtype=np.float64) / n)
    return recon + l1, recon, l1


def _grad_sums(model: SaeModel, X: np.ndarray, lam: float) -> dict[str, np.ndarray]:
    # unnormalised (summed over rows) gradient of n * loss
    C = X - model.b_dec
    Z = C @ model.W_enc + model.b_enc
    active = Z > 0
    F = np.where(active, Z, 0)
    E2 = 2 * (F @ model.W_dec + model.b_dec - X)
    dZ = (E2 @ model.W_dec.T + lam) * active
    return {
        "W_enc": C.T @ dZ,
        "b_enc": dZ.sum(axis=0),
        "W_dec": F.T @ E2,
        "b_dec": E2.sum(axis=0) - dZ.sum(axis=0) @ model.W_enc.T,
    }


def sae_grad(model: SaeModel, X, lam: float, threads: int = 1) -> dict[str, np.ndarray]:
    """Exact gradient of :func:`sae_loss` for all four parameter groups.

    The relu and the L1 term both take subgradient 0 at zero, so inactive
    units receive neither reconstruction nor penalty gradient. With
    ``threads > 1`` the batch is split into contiguous chunks whose sums are
    reduced in chunk order, so results depend only on the thread count.
    """
    _check_lam(lam)
    X = _batch(model, X)
    n = X.shape[0]
    if threads <= 1 or n < 2 * threads:
        sums = _grad_sums(model, X, lam)
    else:
        chunks = np.array_split(X, threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _grad_sums(model, c, lam), chunks))
        sums = parts[0]
        for part in parts[1:]:
            sums = {k: sums[k] + part[k] for k in sums}
    return {k: v / n for k, v in sums.items()}


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new params and new state."""
    for k, g in grads.items():
        if not np.isfinite(g).all():
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericError(f"non-finite gradient in {k} ({bad} entries) at step {state.t + 1}")
    t = state.t + 1
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = beta1 * state.m[k] + (1 - beta1) * g
        v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        step = lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + eps)
        new_params[k] = (p - step).astype(p.dtype, copy=False)
    return new_params, AdamState(m, v, t)


def explained_variance(X, Xhat) -> float:
    """``1 - ||X - Xhat||_F^2 / ||X - colmean(X)||_F^2``."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise DimensionMismatch(f"shape mismatch {X.shape} vs {Xhat.shape}")
    total = np.sum((X - X.mean(axis=0)) ** 2)
    if total == 0:
        raise DataError("explained variance is undefined for zero-variance data")
    return float(1.0 - np.sum((X - Xhat) ** 2) / total)


def dead_neuron_fraction(model: SaeModel, X) -> float:
    """Fraction of hidden units that are never strictly positive on ``X``."""
    X = _batch(model, X)
    if X.shape[0] == 0:
        raise DataError("empty evaluation set")
    alive = np.zeros(model.h, dtype=bool)
    for start in range(0, X.shape[0], 4096):
        F, _ = sae_forward(model, X[start:start + 4096])
        alive |= (F > 0).any(axis=0)
    return np.count_nonzero(~alive) / model.h


def feature_matrix(model: SaeModel, embeddings: EmbeddingMatrix) -> EmbeddingMatrix:
    """SAE feature activations with the embedding ids, ready for mining."""
    F, _ = sae_forward(model, embeddings.values)
    return validate_embedding_matrix(F, embeddings.ids)


@dataclass
class SaeConfig:
    expansion: int = 8
    lam: float = 0.5
    epochs: int = 20
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    normalize_decoder: bool = True
    center: bool = False
    holdout_fraction: float = 0.1
    threads: int = 1

    def validate(self) -> None:
        if self.expansion < 1:
            raise ConfigError("expansion must be >= 1")
        _check_lam(self.lam)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in [0, 1)")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    recon: float
    l1: float
    total: float
    explained_variance: float
    avg_l0: float
    dead_fraction: float


@dataclass
class SaeTrainStats:
    config: dict
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def initial(self) -> EpochStats:
        return self.epochs[0]

    @property
    def final(self) -> EpochStats:
        return self.epochs[-1]

    def to_csv(self) -> str:
        cols = list(asdict(self.epochs[0]))
        lines = [",".join(cols)]
        for e in self.epochs:
            lines.append(",".join(repr(v) for v in asdict(e).values()))
        return "\n".join(lines) + "\n"


def evaluate(model: SaeModel, X, lam: float) -> dict[str, float]:
    X = _batch(model, X)
    F, Xhat = sae_forward(model, X)
    n = X.shape[0]
    recon = float(np.sum((X - Xhat) ** 2, dtype=np.float64) / n)
    l1 = float(lam * np.sum(F, dtype=np.float64) / n)
    return {
        "recon": recon, "l1": l1, "total": recon + l1,
        "explained_variance": explained_variance(X, Xhat),
        "avg_l0": float(np.count_nonzero(F) / n),
        "dead_fraction": np.count_nonzero(~(F > 0).any(axis=0)) / F.shape[1],
    }


def sae_train(X, config: SaeConfig = SaeConfig(), init: SaeModel | None = None) -> tuple[SaeModel, SaeTrainStats]:
    """Seeded minibatch Adam training.

    A held-out slice (``holdout_fraction`` of the rows, chosen by seed) is
    used for every recorded statistic; epoch 0 is the untrained model.
    """
    config.validate()
    values = X.values if isinstance(X, EmbeddingMatrix) else np.asarray(X)
    dtype = init.W_enc.dtype if init is not None else np.float32
    data = np.asarray(values, dtype=dtype)
    n, d = data.shape
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_hold = int(round(config.holdout_fraction * n))
    hold = data[order[:n_hold]] if n_hold else data
    train = data[order[n_hold:]]
    if train.shape[0] < config.batch_size:
        raise ConfigError(f"{train.shape[0]} training rows is fewer than batch_size {config.batch_size}")

    model = init if init is not None else sae_init(d, config.expansion, config.seed, dtype)
    if model.d != d:
        raise DimensionMismatch(f"initial model has D={model.d}, data has D={d}")
    if config.center:
        model = model.replace(b_dec=train.mean(axis=0).astype(dtype))
    model.lam = config.lam
    lam = config.lam

    stats = SaeTrainStats(config=asdict(config))
    stats.epochs.append(EpochStats(0, **evaluate(model, hold, lam)))
    params = model.params()
    state = AdamState.zeros_like(params)
    n_train = train.shape[0]
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n_train)
        for b, start in enumerate(range(0, n_train - config.batch_size + 1, config.batch_size)):
            batch = train[perm[start:start + config.batch_size]]
            grads = sae_grad(model, batch, lam, config.threads)
            try:
                params, state = adam_step(params, grads, state, config.lr, config.beta1, config.beta2, config.eps)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            if config.normalize_decoder:
                params["W_dec"] = _normalize_rows(params["W_dec"]).astype(dtype, copy=False)
            model = model.replace(**params)
        ev = evaluate(model, hold, lam)
        if not math.isfinite(ev["total"]):
            raise NumericError(f"non-finite loss after epoch {epoch}")
        stats.epochs.append(EpochStats(epoch, **ev))
    model.meta = {"seed": config.seed, "epochs": config.epochs, "lr": config.lr,
                  "batch_size": config.batch_size, "normalize_decoder": config.normalize_decoder,
                  "center": config.center}
    return model, stats


@dataclass(frozen=True)
class SweepRow:
    lam: float
    explained_variance: float
    avg_l0: float
    dead_fraction: float


def lambda_sweep(X, config: SaeConfig, lambdas) -> list[tuple[SweepRow, SaeTrainStats]]:
    """Train once per lambda with the same seed and data; report final held-out stats."""
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) < 2:
        raise ConfigError("a lambda sweep needs at least 2 values")
    out = []
    for lam in lambdas:
        cfg = SaeConfig(**{**asdict(config), "lam": lam})
        _, stats = sae_train(X, cfg)
        f = stats.final
        out.append((SweepRow(lam, f.explained_variance, f.avg_l0, f.dead_fraction), stats))
    return out


def sweep_csv(rows) -> str:
    lines = ["lambda,explained_variance,avg_l0,dead_fraction"]
    for r in rows:
        lines.append(f"{r.lam!r},{r.explained_variance!r},{r.avg_l0!r},{r.dead_fraction!r}")
    return "\n".join(lines) + "\n"
