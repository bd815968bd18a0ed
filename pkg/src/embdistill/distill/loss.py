"""Log-compressed power-sum alignment loss.

For a residual matrix E = predicted - target over a batch,

    loss = log(max(sum_ij |E_ij|**alpha, eps))

with alpha an even integer >= 2. The log flattens the scale so early huge
residuals don't swamp the optimizer; the floor eps keeps the log finite
when the residual hits exact zero. Summation is plain np.sum over the
C-contiguous residual array, i.e. numpy pairwise summation in row-major
order, so results are reproducible across runs on the same platform.
"""

import numpy as np

from .._validation import require_finite
from ..errors import NumericalError

DEFAULT_ALPHA = 4
DEFAULT_EPS = 1e-12


def _power_sum(residual: np.ndarray, alpha: int) -> float:
    r = np.ascontiguousarray(residual, dtype=np.float64)
    with np.errstate(over="ignore"):  # overflow is detected and reported below
        return float(np.sum(np.abs(r) ** alpha))


def log_power_sum_loss(predicted, target, alpha: int = DEFAULT_ALPHA, eps: float = DEFAULT_EPS) -> float:
    """Scalar loss; raises NumericalError if the inputs produce a non-finite value."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: predicted {predicted.shape} vs target {target.shape}")
    if alpha < 2 or alpha % 2 != 0:
        raise ValueError(f"alpha must be an even integer >= 2, got {alpha}")
    s = _power_sum(predicted - target, alpha)
    if not np.isfinite(s):
        raise NumericalError(f"power sum overflowed to {s}; residuals are too large for alpha={alpha}")
    return float(np.log(max(s, eps)))


def log_power_sum_loss_grad(predicted, target, alpha: int = DEFAULT_ALPHA, eps: float = DEFAULT_EPS):
    """Loss and its gradient with respect to ``predicted``.

    d loss / d E_ij = alpha * |E_ij|**(alpha-1) * sign(E_ij) / S
    with S = max(power sum, eps) and sign(0) = 0, so the zero-residual
    fixed point has an exactly zero gradient.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch: predicted {predicted.shape} vs target {target.shape}")
    if alpha < 2 or alpha % 2 != 0:
        raise ValueError(f"alpha must be an even integer >= 2, got {alpha}")
    residual = np.ascontiguousarray(predicted - target, dtype=np.float64)
    s_raw = _power_sum(residual, alpha)
    if not np.isfinite(s_raw):
        raise NumericalError(f"power sum overflowed to {s_raw}; residuals are too large for alpha={alpha}")
    s = max(s_raw, eps)
    loss = float(np.log(s))
    grad = (alpha / s) * np.abs(residual) ** (alpha - 1) * np.sign(residual)
    require_finite(grad, "loss gradient", error=NumericalError)
    return loss, grad
