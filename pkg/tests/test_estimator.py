import numpy as np
import pytest
from sklearn.base import clone

from advtkge import EmbeddingPCA, TemporalKGEmbedding, check_quadruples
from advtkge.dataset import build_filter_index
from advtkge.evaluation import evaluate_split
from advtkge.synthetic import make_typed_tkg
from advtkge.trainer import TrainConfig


@pytest.fixture(scope="module")
def kg():
    return make_typed_tkg(n_entities=60, n_types=3, n_relations=4, n_buckets=6, n_facts=800, seed=0)


FAST = dict(dim=8, batch_size=64, epochs=4, valid_interval=2, n_candidates=16)


def test_check_quadruples():
    assert check_quadruples([[0, 1, 2, 3]]).dtype == np.int64
    assert check_quadruples(np.array([[0.0, 1.0, 2.0, 3.0]])).tolist() == [[0, 1, 2, 3]]
    assert check_quadruples(np.empty((0, 4)), allow_empty=True).shape == (0, 4)
    for bad in ([[0, 1, 2]], [[0, 1, 2, 0.5]], [[-1, 0, 0, 0]], [[0, 0, np.nan, 0]], np.empty((0, 4))):
        with pytest.raises(ValueError):
            check_quadruples(bad)
    with pytest.raises(ValueError, match="bucket"):
        check_quadruples([[0, 0, 0, 6]], 5, 5, 6)


def test_params_mirror_train_config():
    est = TemporalKGEmbedding()
    assert set(est.get_params()) == set(TrainConfig.field_names())
    assert est._config() == TrainConfig()
    c = clone(TemporalKGEmbedding(dim=7, mode="baseline"))
    assert c.get_params()["dim"] == 7 and c.mode == "baseline"


@pytest.mark.parametrize("mode", ["adversarial", "baseline"])
def test_fit_predict_score(kg, mode):
    est = TemporalKGEmbedding(mode=mode, **FAST).fit(
        kg.train, n_entities=kg.n_entities, n_relations=kg.n_relations, n_buckets=kg.n_buckets, X_valid=kg.valid
    )
    assert (est.generator_ is None) == (mode == "baseline")
    assert est.state_.epoch == 4
    out = est.decision_function(kg.test[:5])
    np.testing.assert_array_equal(out, est.model_.d_output(kg.test[:5]))
    pred = est.predict(kg.test[:5])
    assert pred.shape == (5,)
    full = est.model_.kind.orientation * est.model_.score_all(kg.test[:5], "tail")
    np.testing.assert_array_equal(full[np.arange(5), pred], full.max(1))
    mrr = est.score(kg.test)
    assert 0 < mrr <= 1
    assert mrr == evaluate_split(est.model_, kg.test, build_filter_index(kg.train, kg.test)).mrr


def test_sizes_inferred(kg):
    est = TemporalKGEmbedding(**{**FAST, "epochs": 1}).fit(kg.train)
    assert est.n_entities_ <= kg.n_entities and est.n_buckets_ <= kg.n_buckets
    assert est.entity_embeddings().shape == (est.n_entities_, 8)


def test_unfitted_and_out_of_range(kg):
    with pytest.raises(Exception):
        TemporalKGEmbedding().predict(kg.test)
    est = TemporalKGEmbedding(**{**FAST, "epochs": 1}).fit(kg.train, n_entities=kg.n_entities, n_relations=kg.n_relations, n_buckets=kg.n_buckets)
    with pytest.raises(ValueError):
        est.decision_function([[kg.n_entities, 0, 0, 0]])


def test_time_aware_embeddings(kg):
    est = TemporalKGEmbedding(model="de-transe", **{**FAST, "epochs": 1}).fit(
        kg.train, n_entities=kg.n_entities, n_relations=kg.n_relations, n_buckets=kg.n_buckets
    )
    stack = est.entity_embeddings(buckets=[0, 5])
    assert stack.shape[:2] == (2, kg.n_entities)
    assert not np.allclose(stack[0], stack[1])


def test_embedding_pca_against_svd():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    pca = EmbeddingPCA(n_components=3).fit(X)
    Z = pca.transform(X)
    centred = X - X.mean(0)
    _, s, _ = np.linalg.svd(centred, full_matrices=False)
    np.testing.assert_allclose(Z.var(0, ddof=1), s[:3] ** 2 / 39, rtol=1e-9)
    np.testing.assert_allclose(EmbeddingPCA(3).fit_transform(X), Z)
    with pytest.raises(ValueError):
        pca.transform(X[:, :5])
    with pytest.raises(ValueError):
        EmbeddingPCA(0).fit(X)
