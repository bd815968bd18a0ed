"""Non-training downstream benchmark: PCA reduction + kNN majority vote.

The protocol never updates the feature extractor. Units (individual rows,
or bags mean-pooled to one vector each) are shuffled per repeat, split
80/20, PCA is fit on the training portion only, and test labels are
predicted by majority vote over the k nearest training neighbors.
Accuracies are reported as mean +- population std over repeats.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from ._validation import as_matrix, require_finite
from .errors import DataValidationError
from .rng import make_rng
from .store import EmbeddingSet, group_by_bag


@dataclass
class PcaModel:
    """Orthonormal principal directions of a training sample."""

    mean: np.ndarray
    components: np.ndarray  # r x d, rows ordered by descending variance
    explained_variance: np.ndarray

    @property
    def r(self) -> int:
        return self.components.shape[0]


def pca_fit(X, n_components: int) -> PcaModel:
    """Fit by SVD of the centered matrix; r = min(n-1, d, n_components).

    Sign convention: in each component the entry of largest magnitude
    (lowest index on ties) is made non-negative, so the basis is unique.
    """
    X = as_matrix(X, "pca input")
    n, d = X.shape
    if n < 2:
        raise DataValidationError(f"PCA needs at least 2 rows, got {n}")
    if n_components < 1:
        raise ValueError(f"n_components must be >= 1, got {n_components}")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    r = min(n - 1, d, n_components)
    components = vt[:r].copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    explained_variance = s[:r] ** 2 / (n - 1)
    return PcaModel(mean=mean, components=components, explained_variance=explained_variance)


def pca_transform(model: PcaModel, X) -> np.ndarray:
    X = as_matrix(X, "pca transform input")
    if X.shape[1] != model.mean.shape[0]:
        raise DataValidationError(
            f"input has {X.shape[1]} columns but the model was fit on {model.mean.shape[0]}"
        )
    return (X - model.mean) @ model.components.T


def _vote(labels_k: np.ndarray) -> int:
    # bincount + argmax: ties go to the smallest label id
    return int(np.argmax(np.bincount(labels_k)))


def knn_predict(train_X, train_y, query, k: int) -> int:
    """Majority label among the k nearest training rows (Euclidean).

    Distance ties prefer the lower training index; vote ties prefer the
    smaller label id; k is clamped to the training size.
    """
    train_X = as_matrix(train_X, "training features")
    train_y = np.asarray(train_y, dtype=np.int64)
    query = np.asarray(query, dtype=np.float64)
    n = train_X.shape[0]
    if n < 1:
        raise DataValidationError("kNN needs a non-empty training set")
    if query.shape != (train_X.shape[1],):
        raise DataValidationError(f"query shape {query.shape} != ({train_X.shape[1]},)")
    diff = train_X - query
    d2 = np.sum(diff * diff, axis=1)
    order = np.argsort(d2, kind="stable")
    return _vote(train_y[order[: min(k, n)]])


def knn_predict_batch(train_X, train_y, queries, k: int) -> np.ndarray:
    """Vectorized knn_predict over query rows; identical results row for row."""
    train_X = as_matrix(train_X, "training features")
    train_y = np.asarray(train_y, dtype=np.int64)
    queries = as_matrix(queries, "query features")
    n = train_X.shape[0]
    if n < 1:
        raise DataValidationError("kNN needs a non-empty training set")
    if queries.shape[1] != train_X.shape[1]:
        raise DataValidationError(
            f"queries have {queries.shape[1]} columns but training rows have {train_X.shape[1]}"
        )
    k_eff = min(k, n)
    # same per-query subtraction and last-axis summation order as knn_predict,
    # so the two routes agree bitwise
    diff = queries[:, None, :] - train_X[None, :, :]
    d2 = np.sum(diff * diff, axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    neighbor_labels = train_y[order[:, :k_eff]]
    return np.asarray([_vote(row) for row in neighbor_labels], dtype=np.int64)


def mean_pool(X, rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.intp)
    if rows.size == 0:
        raise DataValidationError("cannot mean-pool an empty bag")
    return np.asarray(X, dtype=np.float64)[rows].mean(axis=0)


def pool_bags(es: EmbeddingSet):
    """Mean-pool each bag; the bag label is its rows' unanimous label.

    Returns (features, labels, bag_ids) in first-occurrence bag order.
    """
    labels = es.label_array()
    features, bag_labels, bag_ids = [], [], []
    for bag_id, rows in group_by_bag(es):
        bag_label_set = {int(labels[i]) for i in rows}
        if len(bag_label_set) != 1:
            raise DataValidationError(
                f"bag {bag_id!r} mixes labels {sorted(bag_label_set)}; bag-level labels must be unanimous"
            )
        features.append(mean_pool(es.data, rows))
        bag_labels.append(bag_label_set.pop())
        bag_ids.append(bag_id)
    return np.asarray(features), np.asarray(bag_labels, dtype=np.int64), bag_ids


@dataclass
class BenchConfig:
    n_components: int = 50
    k: int = 15
    n_repeats: int = 10
    train_fraction: float = 0.8
    level: str = "patch"
    seed: int = 0

    def validate(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.n_components < 1:
            raise ValueError(f"n_components must be >= 1, got {self.n_components}")
        if self.n_repeats < 1:
            raise ValueError(f"n_repeats must be >= 1, got {self.n_repeats}")
        if self.level not in ("patch", "bag"):
            raise ValueError(f"level must be 'patch' or 'bag', got {self.level!r}")
        return self


@dataclass
class BenchmarkResult:
    per_repeat_accuracy: list
    mean: float
    std: float
    config: BenchConfig | None = field(repr=False, default=None)

    def to_json_obj(self):
        return {
            "per_repeat_accuracy": list(self.per_repeat_accuracy),
            "mean": self.mean,
            "std": self.std,
            "n_repeats": len(self.per_repeat_accuracy),
        }


def _benchmark_units(es: EmbeddingSet, level: str):
    if level == "bag":
        X, y, keys = pool_bags(es)
    else:
        X = np.asarray(es.data, dtype=np.float64)
        y = es.label_array()
        keys = es.sample_ids()
    # canonical unit order: sorted by key, so row order in the file is irrelevant
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    return X[order], y[np.asarray(order, dtype=np.intp)]


def _one_repeat(X, y, config: BenchConfig, repeat: int) -> float:
    n = X.shape[0]
    rng = make_rng(config.seed ^ repeat)
    perm = rng.permutation(n)
    n_train = math.floor(config.train_fraction * n)
    if n_train < 2:
        raise DataValidationError(f"training split has {n_train} units; need at least 2")
    if n_train >= n:
        raise DataValidationError("test split is empty; add data or lower train_fraction")
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    pca = pca_fit(X[train_idx], config.n_components)
    train_Z = pca_transform(pca, X[train_idx])
    test_Z = pca_transform(pca, X[test_idx])
    predictions = knn_predict_batch(train_Z, y[train_idx], test_Z, config.k)
    return float(np.mean(predictions == y[test_idx]))


def run_benchmark(es: EmbeddingSet, config: BenchConfig | None = None, threads: int = 1) -> BenchmarkResult:
    """Repeat seeded 80/20 PCA+kNN evaluations; see module docstring."""
    config = (config or BenchConfig()).validate()
    require_finite(es.data, "embedding data")
    X, y = _benchmark_units(es, config.level)
    accs = map_ordered(lambda r: _one_repeat(X, y, config, r), range(config.n_repeats), threads=threads)
    return BenchmarkResult(
        per_repeat_accuracy=accs,
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        config=config,
    )
