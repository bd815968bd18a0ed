"""Multi-center robustness index over patch embeddings.

Draw a tissue-balanced subset, find each row's k nearest neighbors (self
excluded), and compare two counts over all queries: neighbors sharing the
query's tissue class versus neighbors sharing the query's acquisition
center. The index is the aggregate ratio

    index = tissue_match_total / center_match_total

computed fold by fold on independent seeded resamplings. An index above 1
means embeddings cluster by biology more than by site.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from ._validation import require_finite
from .errors import DataValidationError
from .rng import make_rng
from .store import EmbeddingSet


@dataclass
class RobustnessConfig:
    per_class: int = 80
    k_neighbors: int = 5
    n_folds: int = 5
    seed: int = 0

    def validate(self):
        if self.per_class < 1:
            raise ValueError(f"per_class must be >= 1, got {self.per_class}")
        if self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.n_folds < 1:
            raise ValueError(f"n_folds must be >= 1, got {self.n_folds}")
        return self


@dataclass
class RobustnessResult:
    per_fold_index: list
    mean: float
    std: float
    tissue_totals: list = field(default_factory=list)
    center_totals: list = field(default_factory=list)

    def to_json_obj(self):
        return {
            "per_fold_index": list(self.per_fold_index),
            "mean": self.mean,
            "std": self.std,
            "tissue_totals": [int(t) for t in self.tissue_totals],
            "center_totals": [int(c) for c in self.center_totals],
        }


def sample_balanced(es: EmbeddingSet, per_class: int, rng) -> np.ndarray:
    """Row indices with exactly per_class rows of every tissue class.

    Classes are visited in sorted order and sampled without replacement;
    the result is sorted, so equal seeds give equal subsets regardless of
    how callers consume them.
    """
    tissue = es.tissue_array()
    es.center_array()  # fail fast if center_id is missing anywhere
    chosen = []
    for cls in sorted(set(int(t) for t in tissue)):
        rows = np.flatnonzero(tissue == cls)
        if len(rows) < per_class:
            raise DataValidationError(
                f"tissue class {cls} has {len(rows)} rows, fewer than per_class={per_class}"
            )
        chosen.append(rows[rng.choice(len(rows), size=per_class, replace=False)])
    return np.sort(np.concatenate(chosen))


def robustness_index(es: EmbeddingSet, rows: np.ndarray, k_neighbors: int):
    """(index, tissue_match_total, center_match_total) for one subset.

    Neighbors are the k smallest Euclidean distances among the other
    subset rows (ties prefer the lower row position). A zero center total
    yields +inf as the index; both totals are always returned so the
    caller can aggregate differently.
    """
    rows = np.asarray(rows, dtype=np.intp)
    m = len(rows)
    if m < k_neighbors + 1:
        raise DataValidationError(f"need at least k_neighbors+1={k_neighbors + 1} rows, got {m}")
    X = np.asarray(es.data, dtype=np.float64)[rows]
    require_finite(X, "robustness subset")
    tissue = es.tissue_array()[rows]
    center = es.center_array()[rows]

    d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)  # a query is never its own neighbor
    order = np.argsort(d2, axis=1, kind="stable")
    neighbors = order[:, :k_neighbors]

    tissue_matches = tissue[neighbors] == tissue[:, None]
    center_matches = center[neighbors] == center[:, None]
    tissue_total = int(np.sum(tissue_matches))
    center_total = int(np.sum(center_matches))
    index = float(tissue_total) / center_total if center_total > 0 else math.inf
    return index, tissue_total, center_total


def robustness_cv(es: EmbeddingSet, config: RobustnessConfig | None = None, threads: int = 1) -> RobustnessResult:
    """Independent seeded balanced resamplings; fold f uses seed ^ f."""
    config = (config or RobustnessConfig()).validate()

    def one(fold: int):
        rows = sample_balanced(es, config.per_class, make_rng(config.seed ^ fold))
        return robustness_index(es, rows, config.k_neighbors)

    folds = map_ordered(one, range(config.n_folds), threads=threads)
    indices = [i for i, _, _ in folds]
    finite = [i for i in indices if math.isfinite(i)]
    mean = float(np.mean(finite)) if len(finite) == len(indices) else math.inf
    std = float(np.std(finite)) if len(finite) == len(indices) else math.nan
    return RobustnessResult(
        per_fold_index=indices,
        mean=mean,
        std=std,
        tissue_totals=[t for _, t, _ in folds],
        center_totals=[c for _, _, c in folds],
    )
