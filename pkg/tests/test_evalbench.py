import math

import numpy as np
import pytest

from embdistill.errors import DataValidationError
from embdistill.evalbench import (
    BenchConfig,
    knn_predict,
    knn_predict_batch,
    mean_pool,
    pca_fit,
    pca_transform,
    pool_bags,
    run_benchmark,
)
from embdistill.rng import make_rng
from embdistill.store import EmbeddingSet, SampleMeta

from _oracles import naive_knn_label, pca_eigh


def labeled_set(X, labels, bag_ids=None, ids=None):
    n = len(X)
    meta = [
        SampleMeta(
            sample_id=ids[i] if ids else f"s{i:04d}",
            bag_id=bag_ids[i] if bag_ids else f"bag{i}",
            label=int(labels[i]),
        )
        for i in range(n)
    ]
    return EmbeddingSet(data=np.asarray(X, dtype=np.float32), meta=meta)


# ---------------------------------------------------------------------------
# PCA


def test_pca_rank_one_line():
    t = np.linspace(-2, 2, 30)[:, None]
    X = np.hstack([t, 2 * t])  # y = 2x
    model = pca_fit(X, 2)
    direction = np.array([1.0, 2.0]) / math.sqrt(5.0)
    assert np.allclose(model.components[0], direction, atol=1e-12)
    assert model.explained_variance[1] < 1e-24


def test_pca_component_clamping():
    rng = make_rng(61)
    assert pca_fit(rng.normal(size=(20, 8)), 50).r == 8  # d limits
    assert pca_fit(rng.normal(size=(4, 8)), 50).r == 3  # n-1 limits
    assert pca_fit(rng.normal(size=(20, 8)), 2).r == 2  # request limits


def test_pca_orthonormal_rows():
    rng = make_rng(62)
    for _ in range(5):
        model = pca_fit(rng.normal(size=(15, 6)), 6)
        gram = model.components @ model.components.T
        assert np.allclose(gram, np.eye(model.r), atol=1e-10)


def test_pca_sign_convention():
    rng = make_rng(63)
    for _ in range(10):
        model = pca_fit(rng.normal(size=(12, 5)), 5)
        for row in model.components:
            pivot = np.argmax(np.abs(row))
            assert row[pivot] >= 0


def test_pca_matches_eigendecomposition_oracle():
    rng = make_rng(64)
    X = rng.normal(size=(20, 5))
    model = pca_fit(X, 5)
    _, oracle_components, oracle_eigvals = pca_eigh(X, 5)
    for ours, ref in zip(model.components, oracle_components):
        flipped = ref if np.dot(ours, ref) >= 0 else -ref
        assert np.allclose(ours, flipped, atol=1e-8)
    assert np.allclose(model.explained_variance, oracle_eigvals, atol=1e-8)


def test_pca_transform_centers_training_data():
    rng = make_rng(65)
    X = rng.normal(size=(25, 4)) + 7.0
    model = pca_fit(X, 4)
    Z = pca_transform(model, X)
    assert np.allclose(Z.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(Z.var(axis=0, ddof=1), model.explained_variance, atol=1e-8)


def test_pca_transform_of_mean_is_zero():
    rng = make_rng(66)
    X = rng.normal(size=(10, 3))
    model = pca_fit(X, 3)
    Z = pca_transform(model, np.tile(X.mean(axis=0), (4, 1)))
    assert np.allclose(Z, 0.0, atol=1e-12)


def test_pca_identity_model_is_noop():
    from embdistill.evalbench import PcaModel

    model = PcaModel(mean=np.zeros(3), components=np.eye(3), explained_variance=np.ones(3))
    X = make_rng(67).normal(size=(5, 3))
    assert np.allclose(pca_transform(model, X), X)


def test_pca_needs_two_rows():
    with pytest.raises(DataValidationError, match="at least 2"):
        pca_fit(np.ones((1, 3)), 2)


# ---------------------------------------------------------------------------
# kNN


def test_knn_unanimous_labels():
    rng = make_rng(68)
    X = rng.normal(size=(9, 2))
    assert knn_predict(X, np.full(9, 3), rng.normal(size=2), k=4) == 3


def test_knn_exact_match_k1():
    rng = make_rng(69)
    X = rng.normal(size=(7, 3))
    y = np.arange(7)
    for j in range(7):
        assert knn_predict(X, y, X[j], k=1) == j


def test_knn_hand_vote():
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([0, 1, 1])  # labels A, B, B at distances 1, 2, 3 from origin
    query = np.array([0.0])
    assert knn_predict(X, y, query, k=3) == 1
    assert knn_predict(X, y, query, k=1) == 0


def test_knn_distance_tie_prefers_lower_index():
    X = np.array([[1.0], [-1.0], [1.0]])
    y = np.array([2, 1, 0])
    assert knn_predict(X, y, np.array([0.0]), k=1) == 2  # index 0 wins the tie


def test_knn_vote_tie_prefers_smaller_label():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([5, 3, 5, 3])
    assert knn_predict(X, y, np.array([0.0]), k=4) == 3


def test_knn_k_clamped_to_train_size():
    X = np.array([[0.0], [1.0]])
    y = np.array([1, 1])
    assert knn_predict(X, y, np.array([5.0]), k=100) == 1


def test_knn_batch_matches_single_and_naive():
    rng = make_rng(70)
    for trial in range(5):
        n, m, d = 30, 12, 4
        train_X = rng.normal(size=(n, d))
        train_y = rng.integers(0, 4, size=n)
        queries = rng.normal(size=(m, d))
        k = int(rng.integers(1, 10))
        batch = knn_predict_batch(train_X, train_y, queries, k)
        for j in range(m):
            single = knn_predict(train_X, train_y, queries[j], k)
            assert batch[j] == single
            assert batch[j] == naive_knn_label(train_X, train_y, queries[j], k)


def test_knn_invariant_under_isometry():
    rng = make_rng(71)
    train_X = rng.normal(size=(20, 3))
    train_y = rng.integers(0, 3, size=20)
    queries = rng.normal(size=(6, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    shift = rng.normal(size=3)
    base = knn_predict_batch(train_X, train_y, queries, 5)
    moved = knn_predict_batch(train_X @ q + shift, train_y, queries @ q + shift, 5)
    assert np.array_equal(base, moved)


# ---------------------------------------------------------------------------
# pooling


def test_mean_pool_examples():
    X = np.array([[1.0, 3.0], [3.0, 5.0], [9.0, 9.0]])
    assert np.allclose(mean_pool(X, [0, 1]), [2.0, 4.0])
    assert np.allclose(mean_pool(X, [2]), [9.0, 9.0])
    v = np.array([[2.0, -1.0], [-2.0, 1.0]])
    assert np.allclose(mean_pool(v, [0, 1]), 0.0)
    with pytest.raises(DataValidationError, match="empty bag"):
        mean_pool(X, [])


def test_pool_bags_unanimity():
    X = np.arange(8, dtype=np.float32).reshape(4, 2)
    es = labeled_set(X, [1, 1, 0, 0], bag_ids=["a", "a", "b", "b"])
    pooled, labels, bag_ids = pool_bags(es)
    assert bag_ids == ["a", "b"]
    assert labels.tolist() == [1, 0]
    assert np.allclose(pooled, [[1.0, 2.0], [5.0, 6.0]])

    mixed = labeled_set(X, [1, 0, 0, 0], bag_ids=["a", "a", "b", "b"])
    with pytest.raises(DataValidationError, match="unanimous"):
        pool_bags(mixed)


# ---------------------------------------------------------------------------
# full benchmark


def two_blob_set(n=200, d=5, gap=50.0, seed=0):
    rng = make_rng(seed)
    half = n // 2
    X = rng.normal(size=(n, d))
    X[half:] += gap
    labels = np.array([0] * half + [1] * (n - half))
    return labeled_set(X, labels)


def test_benchmark_separable_blobs_perfect():
    result = run_benchmark(two_blob_set(), BenchConfig(n_components=3, k=5, seed=1))
    assert result.mean == 1.0
    assert result.std == 0.0
    assert len(result.per_repeat_accuracy) == 10


def test_benchmark_random_labels_near_chance():
    rng = make_rng(72)
    X = rng.normal(size=(500, 6))
    labels = rng.integers(0, 2, size=500)
    result = run_benchmark(labeled_set(X, labels), BenchConfig(n_components=6, seed=2))
    assert abs(result.mean - 0.5) <= 0.1


def test_benchmark_deterministic_per_seed():
    es = two_blob_set(n=60, gap=2.0, seed=3)
    a = run_benchmark(es, BenchConfig(n_components=4, k=3, seed=7))
    b = run_benchmark(es, BenchConfig(n_components=4, k=3, seed=7))
    assert a.per_repeat_accuracy == b.per_repeat_accuracy
    c = run_benchmark(es, BenchConfig(n_components=4, k=3, seed=8))
    assert a.per_repeat_accuracy != c.per_repeat_accuracy


def test_benchmark_invariant_to_row_order():
    rng = make_rng(73)
    X = rng.normal(size=(50, 4))
    labels = rng.integers(0, 3, size=50)
    es = labeled_set(X, labels)
    perm = rng.permutation(50)
    shuffled = labeled_set(X[perm], labels[perm], ids=[f"s{i:04d}" for i in perm])
    cfg = BenchConfig(n_components=4, k=3, n_repeats=4, seed=5)
    assert run_benchmark(es, cfg).per_repeat_accuracy == run_benchmark(shuffled, cfg).per_repeat_accuracy


def test_benchmark_matches_brute_force_oracle():
    # with n_components >= d the projection is an isometry, so an oracle
    # that skips PCA entirely must reproduce every prediction
    rng = make_rng(74)
    for trial in range(10):
        n = int(rng.integers(25, 100))
        d = int(rng.integers(2, 10))
        X = rng.normal(size=(n, d))
        labels = rng.integers(0, 3, size=n)
        es = labeled_set(X, labels)
        cfg = BenchConfig(n_components=d, k=int(rng.integers(1, 8)), n_repeats=3, seed=trial)
        result = run_benchmark(es, cfg)

        keys = sorted(range(n), key=lambda i: es.meta[i].sample_id)
        Xs, ys = X[keys].astype(np.float64), labels[np.asarray(keys)]
        for repeat in range(cfg.n_repeats):
            perm = make_rng(cfg.seed ^ repeat).permutation(n)
            n_train = math.floor(cfg.train_fraction * n)
            tr, te = perm[:n_train], perm[n_train:]
            correct = sum(
                naive_knn_label(Xs[tr], ys[tr], Xs[j], cfg.k) == ys[j] for j in te
            )
            assert result.per_repeat_accuracy[repeat] == correct / len(te), f"trial {trial}"


def test_benchmark_bag_level_with_singleton_bags_equals_patch_level():
    rng = make_rng(75)
    X = rng.normal(size=(40, 3))
    labels = rng.integers(0, 2, size=40)
    # one bag per row, with bag keys sorting in the same order as sample ids
    es = labeled_set(X, labels, bag_ids=[f"b{i:04d}" for i in range(40)])
    cfg_patch = BenchConfig(n_components=3, k=3, n_repeats=5, seed=11, level="patch")
    cfg_bag = BenchConfig(n_components=3, k=3, n_repeats=5, seed=11, level="bag")
    patch = run_benchmark(es, cfg_patch)
    bag = run_benchmark(es, cfg_bag)
    assert patch.per_repeat_accuracy == bag.per_repeat_accuracy


def test_benchmark_parallel_matches_serial():
    es = two_blob_set(n=80, gap=1.5, seed=9)
    cfg = BenchConfig(n_components=3, k=5, seed=4)
    serial = run_benchmark(es, cfg, threads=1)
    parallel = run_benchmark(es, cfg, threads=4)
    assert serial.per_repeat_accuracy == parallel.per_repeat_accuracy


def test_benchmark_too_small_split_errors():
    es = two_blob_set(n=2, seed=10)
    with pytest.raises(DataValidationError, match="at least 2"):
        run_benchmark(es, BenchConfig(n_repeats=1, seed=0))
