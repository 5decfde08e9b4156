"""scikit-learn style wrappers around training, scoring and PCA export."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .dataset import build_filter_index
from .evaluation import evaluate_split
from .numerics import pca_basis
from .trainer import TrainConfig, TrainingData, train


def check_quadruples(X, n_entities=None, n_relations=None, n_buckets=None, allow_empty=False) -> np.ndarray:
    """Validate an (n, 4) array of (head, relation, tail, bucket) ids.

    Returns a C-contiguous int64 copy. Bounds are checked when given.
    """
    X = check_array(
        X, dtype=None, ensure_2d=True, ensure_min_samples=0 if allow_empty else 1, ensure_all_finite=True
    )
    if X.shape[1] != 4:
        raise ValueError(f"expected 4 columns (head, relation, tail, bucket), got {X.shape[1]}")
    if X.size and not np.all(np.equal(np.mod(X, 1), 0)):
        raise ValueError("quadruple ids must be integers")
    X = np.ascontiguousarray(X, dtype=np.int64)
    if X.size and X.min() < 0:
        raise ValueError("quadruple ids must be non-negative")
    for col, bound, what in ((0, n_entities, "head"), (2, n_entities, "tail"), (1, n_relations, "relation"), (3, n_buckets, "bucket")):
        if bound is not None and X.size and X[:, col].max() >= bound:
            raise ValueError(f"{what} id {X[:, col].max()} out of range for {bound} ids")
    return X


class TemporalKGEmbedding(BaseEstimator):
    """Train a temporal KG embedding model on encoded quadruples.

    ``fit`` runs adversarial or baseline training; ``decision_function``
    returns plausibility (higher means more likely true); ``predict`` returns
    the best-scoring tail entity per query; ``score`` is filtered MRR.
    """

    def __init__(
        self,
        model="ttranse",
        norm="l1",
        de_fraction=0.64,
        dim=100,
        gen_dim=None,
        lr_generator=0.001,
        lr_discriminator=0.0001,
        batch_size=512,
        epochs=500,
        n_dis=5,
        temperature=0.5,
        temperature_end=None,
        clip=0.01,
        margin=1.0,
        mode="adversarial",
        n_candidates=512,
        backbone="ttranse",
        filter_false_negatives=False,
        valid_interval=100,
        seed=0,
        workers=1,
    ):
        self.model = model
        self.norm = norm
        self.de_fraction = de_fraction
        self.dim = dim
        self.gen_dim = gen_dim
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.batch_size = batch_size
        self.epochs = epochs
        self.n_dis = n_dis
        self.temperature = temperature
        self.temperature_end = temperature_end
        self.clip = clip
        self.margin = margin
        self.mode = mode
        self.n_candidates = n_candidates
        self.backbone = backbone
        self.filter_false_negatives = filter_false_negatives
        self.valid_interval = valid_interval
        self.seed = seed
        self.workers = workers

    def _config(self) -> TrainConfig:
        return TrainConfig(**{k: getattr(self, k) for k in TrainConfig.field_names()})

    def fit(self, X, y=None, *, n_entities=None, n_relations=None, n_buckets=None, X_valid=None):
        cfg = self._config()
        X = check_quadruples(X)
        parts = [X] + ([check_quadruples(X_valid)] if X_valid is not None else [])
        allq = np.concatenate(parts)
        n_e = int(n_entities if n_entities is not None else max(allq[:, 0].max(), allq[:, 2].max()) + 1)
        n_r = int(n_relations if n_relations is not None else allq[:, 1].max() + 1)
        n_b = int(n_buckets if n_buckets is not None else allq[:, 3].max() + 1)
        for q in parts:
            check_quadruples(q, n_e, n_r, n_b)
        valid = parts[1] if X_valid is not None else None
        data = TrainingData(X, n_e, n_r, n_b, valid, build_filter_index(*parts))
        self.state_ = train(data, cfg)
        self.model_, self.generator_ = self.state_.final()
        self.n_entities_, self.n_relations_, self.n_buckets_ = n_e, n_r, n_b
        self.train_quads_ = X
        self.n_features_in_ = 4
        return self

    def _checked(self, X):
        check_is_fitted(self, "model_")
        return check_quadruples(X, self.n_entities_, self.n_relations_, self.n_buckets_)

    def decision_function(self, X) -> np.ndarray:
        return self.model_.d_output(self._checked(X)) if len(np.atleast_2d(X)) else np.empty(0)

    def predict(self, X) -> np.ndarray:
        """Highest-plausibility tail entity for each (head, relation, ?, bucket)."""
        X = self._checked(X)
        out = self.model_.kind.orientation * self.model_.score_all(X, "tail")
        return np.argmax(out, axis=1)

    def score(self, X, y=None) -> float:
        """Filtered MRR on ``X``; training facts are filtered as known truths."""
        X = self._checked(X)
        return evaluate_split(self.model_, X, build_filter_index(self.train_quads_, X), workers=self.workers).mrr

    def entity_embeddings(self, buckets=None) -> np.ndarray:
        """(|E|, width) vectors; with ``buckets`` a (|buckets|, |E|, width) stack."""
        check_is_fitted(self, "model_")
        ents = np.arange(self.n_entities_)
        if buckets is None:
            return self.model_.entity_vectors(ents)
        return np.stack([self.model_.entity_vectors(ents, np.full_like(ents, b)) for b in buckets])


class EmbeddingPCA(TransformerMixin, BaseEstimator):
    """Principal-component projection with a deterministic sign convention."""

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if not isinstance(self.n_components, (int, np.integer)) or self.n_components < 1:
            raise ValueError("n_components must be a positive integer")
        self.mean_, self.components_ = pca_basis(X, int(self.n_components))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_
