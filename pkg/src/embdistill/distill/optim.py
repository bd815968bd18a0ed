"""Optimizer, schedule, and stopping rule for the distillation loop.

AdamW here is decoupled weight decay: the decay term is added to the
rescaled Adam step, not to the gradient, so decay strength is independent
of the gradient's second-moment normalization.
"""

from collections import deque

import numpy as np

from ..errors import NumericalError


class CosineSchedule:
    """Half-cosine interpolation from v_start at t=0 to v_end at t=T.

        value(t) = v_end + 0.5 * (v_start - v_end) * (1 + cos(pi * t / T))

    Endpoints are exact; t beyond T clamps to v_end. Works in either
    direction (v_start above or below v_end).
    """

    def __init__(self, v_start: float, v_end: float, total_steps: int):
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        self.v_start = float(v_start)
        self.v_end = float(v_end)
        self.total_steps = int(total_steps)

    def value(self, t: int) -> float:
        if t <= 0:
            return self.v_start
        if t >= self.total_steps:
            return self.v_end
        cos_term = np.cos(np.pi * t / self.total_steps)
        return self.v_end + 0.5 * (self.v_start - self.v_end) * (1.0 + cos_term)

    def __call__(self, t: int) -> float:
        return self.value(t)


class AdamW:
    """Adam with decoupled weight decay over a dict of named parameters.

    Parameters are updated in place. ``decay`` names the parameters that
    receive weight decay; everything else (e.g. network biases) is decayed
    at zero strength. Step count t starts at 1 so the bias corrections
    1 - beta**t are well defined on the first step.
    """

    def __init__(self, params: dict, decay, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.decay = set(decay)
        unknown = self.decay - set(params)
        if unknown:
            raise ValueError(f"decay names not present in params: {sorted(unknown)}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict, lr: float, weight_decay: float):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            wd = weight_decay if name in self.decay else 0.0
            p -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + wd * p)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }


class LossWindowMonitor:
    """Early stopping on a trailing loss window.

    For each observed loss: if the window already holds ``window`` values
    and the loss exceeds their mean, count a violation; then the loss
    enters the window (evicting the oldest). Training stops once
    violations exceed ``max_violations``. In "cumulative" mode (default)
    violations only accumulate; "consecutive" resets the count whenever a
    loss does not violate.
    """

    def __init__(self, window: int = 100, max_violations: int = 10, mode: str = "cumulative"):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if max_violations < 0:
            raise ValueError(f"max_violations must be >= 0, got {max_violations}")
        if mode not in ("cumulative", "consecutive"):
            raise ValueError(f"mode must be 'cumulative' or 'consecutive', got {mode!r}")
        self.window = window
        self.max_violations = max_violations
        self.mode = mode
        self.losses: deque = deque(maxlen=window)
        self._sum = 0.0
        self.violations = 0

    def observe(self, loss: float) -> bool:
        """Record one loss; returns True when training should stop."""
        loss = float(loss)
        if len(self.losses) == self.window:
            mean = self._sum / self.window
            if loss > mean:
                self.violations += 1
            elif self.mode == "consecutive":
                self.violations = 0
        if len(self.losses) == self.window:
            self._sum -= self.losses[0]
        self.losses.append(loss)
        self._sum += loss
        return self.violations > self.max_violations
