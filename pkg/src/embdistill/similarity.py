"""Linear centered kernel alignment between paired representations.

For row-aligned matrices X (n x d1) and Y (n x d2) with column-centered
versions Xc, Yc:

    cka = ||Yc' Xc||_F^2 / (||Xc' Xc||_F * ||Yc' Yc||_F)

This feature-space form equals the Gram-matrix HSIC formulation but costs
O(n d^2) instead of O(n^2 d). The value lies in [0, 1]; it is invariant to
orthogonal right-multiplication and nonzero isotropic scaling of either
argument. Degenerate inputs (a side with all-constant columns) yield 0.0
with a flag instead of a division by zero.
"""

from dataclasses import dataclass

import numpy as np

from ._parallel import map_ordered
from ._validation import as_matrix
from .errors import DataValidationError
from .rng import make_rng
from .store import EmbeddingSet, align_pairs

DEFAULT_SUBSAMPLES = 10
DEFAULT_SUBSAMPLE_CAP = 2048


def center_columns(X) -> np.ndarray:
    X = as_matrix(X, "matrix")
    if X.shape[0] < 2:
        raise DataValidationError(f"column centering needs at least 2 rows, got {X.shape[0]}")
    return X - X.mean(axis=0)


def linear_cka(X, Y, return_flag: bool = False):
    """CKA score for row-aligned X, Y; optionally also a degeneracy flag."""
    X = as_matrix(X, "first representation")
    Y = as_matrix(Y, "second representation")
    if X.shape[0] != Y.shape[0]:
        raise DataValidationError(f"row count mismatch: {X.shape[0]} vs {Y.shape[0]}")
    Xc = center_columns(X)
    Yc = center_columns(Y)
    cross = np.linalg.norm(Yc.T @ Xc, "fro") ** 2
    x_norm = np.linalg.norm(Xc.T @ Xc, "fro")
    y_norm = np.linalg.norm(Yc.T @ Yc, "fro")
    if x_norm == 0.0 or y_norm == 0.0:
        return (0.0, True) if return_flag else 0.0
    value = float(cross / (x_norm * y_norm))
    return (value, False) if return_flag else value


@dataclass
class CkaReport:
    values: list
    mean: float
    std: float
    n_subsamples: int
    subsample_size: int
    seed: int
    degenerate: bool = False

    def to_json_obj(self):
        return {
            "values": list(self.values),
            "mean": self.mean,
            "std": self.std,
            "n_subsamples": self.n_subsamples,
            "subsample_size": self.subsample_size,
            "seed": self.seed,
            "degenerate": self.degenerate,
        }


def cka_report(
    X,
    Y,
    n_subsamples: int = DEFAULT_SUBSAMPLES,
    subsample_size: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> CkaReport:
    """Mean +- population std of linear CKA over seeded row subsets.

    Subsets are drawn without replacement within each subset; subset i uses
    the generator seeded with seed ^ i. subsample_size defaults to
    min(n, 2048).
    """
    X = as_matrix(X, "first representation")
    Y = as_matrix(Y, "second representation")
    if X.shape[0] != Y.shape[0]:
        raise DataValidationError(f"row count mismatch: {X.shape[0]} vs {Y.shape[0]}")
    n = X.shape[0]
    if subsample_size is None:
        subsample_size = min(n, DEFAULT_SUBSAMPLE_CAP)
    if subsample_size < 2:
        raise DataValidationError(f"subsample_size must be >= 2, got {subsample_size}")
    if subsample_size > n:
        raise DataValidationError(f"subsample_size {subsample_size} exceeds the {n} aligned rows")
    if n_subsamples < 1:
        raise ValueError(f"n_subsamples must be >= 1, got {n_subsamples}")

    def one(i: int):
        rows = make_rng(seed ^ i).choice(n, size=subsample_size, replace=False)
        return linear_cka(X[rows], Y[rows], return_flag=True)

    scored = map_ordered(one, range(n_subsamples), threads=threads)
    values = [v for v, _ in scored]
    degenerate = any(flag for _, flag in scored)
    return CkaReport(
        values=values,
        mean=float(np.mean(values)),
        std=float(np.std(values)),
        n_subsamples=n_subsamples,
        subsample_size=subsample_size,
        seed=seed,
        degenerate=degenerate,
    )


def cka_report_sets(
    first: EmbeddingSet,
    second: EmbeddingSet,
    n_subsamples: int = DEFAULT_SUBSAMPLES,
    subsample_size: int | None = None,
    seed: int = 0,
    threads: int = 1,
) -> CkaReport:
    """cka_report over the rows the two sets share (matched by sample_id)."""
    aligned = align_pairs(first, second)
    X = np.asarray(first.data, dtype=np.float64)[aligned.first_rows()]
    Y = np.asarray(second.data, dtype=np.float64)[aligned.second_rows()]
    return cka_report(X, Y, n_subsamples=n_subsamples, subsample_size=subsample_size, seed=seed, threads=threads)
