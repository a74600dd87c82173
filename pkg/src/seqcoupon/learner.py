"""From-scratch probabilistic classifiers with per-sample weights.

Two interchangeable learners back the uplift predictors: L2-regularised
logistic regression trained by deterministic full-batch gradient descent, and
stagewise boosted depth-1 stumps with Newton leaf values. Both standardise
features internally (weighted mean/scale, stored in the model) so training and
serving share constants, and both are bit-deterministic for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .domain import FeatureVector
from .errors import DegenerateDataError, InputError, SchemaMismatchError

PROB_CLAMP = 1e-6
LEAF_CLIP = 4.0
N_SPLIT_CANDIDATES = 32

KIND_LOGISTIC = "logistic"
KIND_BOOSTED = "boosted_stumps"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with boolean labels and positive per-sample weights."""

    features: np.ndarray
    labels: np.ndarray
    weights: Optional[np.ndarray] = None
    schema_id: str = ""

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise InputError("features must be a 2-D matrix")
        y = np.asarray(self.labels, dtype=bool)
        w = self.weights
        w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
        if not (len(X) == len(y) == len(w)):
            raise InputError("features, labels and weights must have equal row counts")
        if not np.all(np.isfinite(X)):
            raise InputError("features contain non-finite values")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InputError("weights must be positive and finite")
        schema = self.schema_id or f"adhoc/{X.shape[1]}"
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "schema_id", schema)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = KIND_LOGISTIC
    learning_rate: float = 0.5
    l2: float = 0.0
    epochs: int = 300
    max_stumps: int = 400
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in (KIND_LOGISTIC, KIND_BOOSTED):
            raise InputError(f"unknown learner kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be > 0")
        if self.l2 < 0:
            raise InputError("l2 must be >= 0")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.max_stumps < 1:
            raise InputError("max_stumps must be >= 1")


@dataclass(frozen=True)
class Stump:
    feature: int
    threshold: float
    left_value: float  # applies where x[feature] <= threshold
    right_value: float


@dataclass(frozen=True)
class Model:
    """Trained classifier with its schema binding and standardisation constants."""

    kind: str
    schema_id: str
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    intercept: float
    coef: Optional[np.ndarray] = None
    stumps: tuple[Stump, ...] = ()
    config: LearnerConfig = LearnerConfig()

    def __post_init__(self):
        mean = np.asarray(self.feature_mean, dtype=float)
        scale = np.asarray(self.feature_scale, dtype=float)
        object.__setattr__(self, "feature_mean", mean)
        object.__setattr__(self, "feature_scale", scale)
        if self.kind == KIND_LOGISTIC:
            coef = np.asarray(self.coef, dtype=float)
            if coef.shape != mean.shape:
                raise InputError("coefficient length does not match the schema")
            object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "stumps", tuple(self.stumps))

    @property
    def n_features(self) -> int:
        return len(self.feature_mean)

    def coefficients_raw(self) -> tuple[np.ndarray, float]:
        """Logistic coefficients mapped back to the raw (unstandardised) feature scale."""
        if self.kind != KIND_LOGISTIC:
            raise InputError("raw coefficients only defined for logistic models")
        raw = self.coef / self.feature_scale
        intercept = self.intercept - float(np.dot(raw, self.feature_mean))
        return raw, intercept


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _standardise_constants(X: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Weighted moments so that integer weights and sample duplication coincide.
    wsum = w.sum()
    mean = (w @ X) / wsum if X.size else np.zeros(X.shape[1])
    var = (w @ (X - mean) ** 2) / wsum if X.size else np.zeros(X.shape[1])
    scale = np.sqrt(var)
    scale[scale == 0.0] = 1.0
    return mean, scale


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _loss(p: np.ndarray, y: np.ndarray, w_norm: np.ndarray) -> float:
    p = _clamped(p)
    ll = np.where(y, -np.log(p), -np.log1p(-p))
    return float(w_norm @ ll)


def train(data: Dataset, config: LearnerConfig) -> Model:
    """Fit the configured learner; deterministic for identical inputs."""
    X, y, w = data.features, data.labels, data.weights
    mean, scale = _standardise_constants(X, w)
    Xs = (X - mean) / scale
    w_norm = w / w.sum()

    if config.kind == KIND_LOGISTIC:
        if not (y.any() and (~y).any()):
            raise DegenerateDataError("logistic training needs both classes present")
        coef, intercept = _fit_logistic(Xs, y, w_norm, config)
        return Model(
            kind=KIND_LOGISTIC,
            schema_id=data.schema_id,
            feature_mean=mean,
            feature_scale=scale,
            intercept=intercept,
            coef=coef,
            config=config,
        )

    intercept, stumps = _fit_boosted(Xs, y, w_norm, config)
    return Model(
        kind=KIND_BOOSTED,
        schema_id=data.schema_id,
        feature_mean=mean,
        feature_scale=scale,
        intercept=intercept,
        stumps=stumps,
        config=config,
    )


def _fit_logistic(Xs, y, w_norm, config) -> tuple[np.ndarray, float]:
    n, d = Xs.shape
    coef = np.zeros(d)
    intercept = 0.0
    yf = y.astype(float)
    for _ in range(config.epochs):
        p = _sigmoid(Xs @ coef + intercept)
        resid = w_norm * (p - yf)
        grad_c = Xs.T @ resid + config.l2 * coef
        grad_b = resid.sum()
        coef = coef - config.learning_rate * grad_c
        intercept = intercept - config.learning_rate * grad_b
    return coef, float(intercept)


def _weighted_quantiles(x: np.ndarray, w: np.ndarray, qs: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    xs, ws = x[order], w[order]
    cdf = np.cumsum(ws)
    cdf = cdf / cdf[-1]
    return xs[np.searchsorted(cdf, qs, side="left").clip(0, len(xs) - 1)]


def _split_candidates(Xs: np.ndarray, w_norm: np.ndarray) -> list[np.ndarray]:
    # Candidates follow the weighted training distribution, so sample weights
    # steer where the ensemble spends its resolution.
    qs = np.linspace(0.0, 1.0, N_SPLIT_CANDIDATES + 2)[1:-1]
    return [_weighted_quantiles(Xs[:, f], w_norm, qs) for f in range(Xs.shape[1])]


def _fit_boosted(Xs, y, w_norm, config) -> tuple[float, tuple[Stump, ...]]:
    yf = y.astype(float)
    prior = float(np.clip(w_norm @ yf, PROB_CLAMP, 1.0 - PROB_CLAMP))
    base = float(np.log(prior / (1.0 - prior)))
    if not (y.any() and (~y).any()):
        return base, ()  # single-class data: the prior is the model

    candidates = _split_candidates(Xs, w_norm)
    n_rounds = min(config.epochs, config.max_stumps)
    F = np.full(len(yf), base)
    loss = _loss(_sigmoid(F), y, w_norm)
    stumps: list[Stump] = []

    for _ in range(n_rounds):
        p = _sigmoid(F)
        g = w_norm * (p - yf)
        h = w_norm * p * (1.0 - p)
        g_tot, h_tot = g.sum(), h.sum()

        best = None  # (score, feature, cand_idx)
        for f in range(Xs.shape[1]):
            cand = candidates[f]
            bucket = np.searchsorted(cand, Xs[:, f], side="left")
            gl = np.cumsum(np.bincount(bucket, weights=g, minlength=len(cand) + 1))[:-1]
            hl = np.cumsum(np.bincount(bucket, weights=h, minlength=len(cand) + 1))[:-1]
            gr, hr = g_tot - gl, h_tot - hl
            score = gl**2 / (hl + config.l2 + 1e-12) + gr**2 / (hr + config.l2 + 1e-12)
            c = int(np.argmax(score))
            if best is None or score[c] > best[0]:
                best = (float(score[c]), f, c)

        _, f, c = best
        threshold = float(candidates[f][c])
        left = Xs[:, f] <= threshold
        gl, hl = g[left].sum(), h[left].sum()
        gr, hr = g_tot - gl, h_tot - hl
        vl = float(np.clip(-config.learning_rate * gl / (hl + config.l2 + 1e-12),
                           -LEAF_CLIP, LEAF_CLIP))
        vr = float(np.clip(-config.learning_rate * gr / (hr + config.l2 + 1e-12),
                           -LEAF_CLIP, LEAF_CLIP))
        F_new = F + np.where(left, vl, vr)
        loss_new = _loss(_sigmoid(F_new), y, w_norm)
        if loss_new > loss + 1e-12:
            break  # no descent available at this step; stop rather than overshoot
        F, loss = F_new, loss_new
        stumps.append(Stump(feature=f, threshold=threshold, left_value=vl, right_value=vr))

    return base, tuple(stumps)


def decision_scores(model: Model, X: np.ndarray) -> np.ndarray:
    """Raw additive scores (logits) for a matrix of raw-scale features."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise SchemaMismatchError(
            f"model expects {model.n_features} features, got matrix of shape {X.shape}"
        )
    Xs = (X - model.feature_mean) / model.feature_scale
    if model.kind == KIND_LOGISTIC:
        return Xs @ model.coef + model.intercept
    z = np.full(len(Xs), model.intercept)
    for s in model.stumps:
        z += np.where(Xs[:, s.feature] <= s.threshold, s.left_value, s.right_value)
    return z


def predict_matrix(model: Model, X: np.ndarray) -> np.ndarray:
    """Clamped sale probabilities for a matrix of raw-scale features."""
    return _clamped(_sigmoid(decision_scores(model, X)))


def predict(model: Model, fv: FeatureVector) -> float:
    """Probability for one feature vector; refuses a schema mismatch."""
    if fv.schema_id != model.schema_id:
        raise SchemaMismatchError(
            f"model bound to schema {model.schema_id!r}, vector carries {fv.schema_id!r}"
        )
    return float(predict_matrix(model, fv.values[None, :])[0])


def weighted_log_loss(model: Model, data: Dataset) -> float:
    """Weighted mean clamped log-loss of the model on a dataset."""
    p = predict_matrix(model, data.features)
    return _loss(p, data.labels, data.weights / data.weights.sum())


def fit_prior_model(data: Dataset) -> Model:
    """Intercept-only fallback used when a fold cannot identify a full model."""
    w_norm = data.weights / data.weights.sum()
    prior = float(np.clip(w_norm @ data.labels.astype(float), PROB_CLAMP, 1.0 - PROB_CLAMP))
    mean, scale = _standardise_constants(data.features, data.weights)
    return Model(
        kind=KIND_LOGISTIC,
        schema_id=data.schema_id,
        feature_mean=mean,
        feature_scale=scale,
        intercept=float(np.log(prior / (1.0 - prior))),
        coef=np.zeros(data.features.shape[1]),
    )


@dataclass(frozen=True)
class GridResult:
    config: LearnerConfig
    mean_loss: float
    fold_losses: tuple[float, ...]
    prior_folds: tuple[int, ...]  # folds scored with the fallback prior model


def grid_search(
    data: Dataset, grid: Sequence[LearnerConfig], k_folds: int, seed: int
) -> tuple[LearnerConfig, list[GridResult]]:
    """K-fold cross-validated mean log-loss per config; first strict minimum wins."""
    if not grid:
        raise InputError("grid must be non-empty")
    if k_folds < 2:
        raise InputError("k_folds must be >= 2")
    n = len(data)
    if n < k_folds:
        raise InputError(f"need at least {k_folds} samples for {k_folds}-fold CV")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k_folds)

    table: list[GridResult] = []
    for config in grid:
        losses, prior_flags = [], []
        for fi, val_idx in enumerate(folds):
            train_mask = np.ones(n, dtype=bool)
            train_mask[val_idx] = False
            d_train = Dataset(
                data.features[train_mask], data.labels[train_mask],
                data.weights[train_mask], data.schema_id,
            )
            d_val = Dataset(
                data.features[val_idx], data.labels[val_idx],
                data.weights[val_idx], data.schema_id,
            )
            try:
                model = train(d_train, config)
            except DegenerateDataError:
                model = fit_prior_model(d_train)
                prior_flags.append(fi)
            losses.append(weighted_log_loss(model, d_val))
        table.append(
            GridResult(
                config=config,
                mean_loss=float(np.mean(losses)),
                fold_losses=tuple(losses),
                prior_folds=tuple(prior_flags),
            )
        )

    # A diverged fit can report NaN loss; rank it last instead of letting NaN
    # comparisons freeze the incumbent.
    def rank(i: int):
        loss = table[i].mean_loss
        return (loss if np.isfinite(loss) else np.inf, i)

    best = min(range(len(table)), key=rank)
    return table[best].config, table
