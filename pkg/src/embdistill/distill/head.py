"""Projection head: batch normalization followed by a bias-free linear map.

Train-mode forward normalizes with the batch mean and *biased* variance
(divide by b, not b-1), updates running statistics with momentum m:

    running = (1 - m) * running + m * batch

then applies y = x_hat * gamma + beta and projects with W (d_in x d_out).
Eval mode normalizes with the running statistics and performs no update.

backward() consumes the cache produced by the most recent train-mode
forward and yields gradients for W, gamma, beta and the input. Calling it
with an eval-mode cache is an error: eval statistics are constants, so the
train-mode formula would silently produce wrong input gradients.
"""

import numpy as np

from ..rng import make_rng


class ProjectionHead:
    def __init__(self, d_in: int, d_out: int, momentum: float = 0.1, eps: float = 1e-5, seed: int = 0):
        if d_in < 1 or d_out < 1:
            raise ValueError(f"need d_in >= 1 and d_out >= 1, got {d_in}, {d_out}")
        if not 0.0 < momentum < 1.0:
            raise ValueError(f"momentum must be in (0, 1), got {momentum}")
        self.d_in = d_in
        self.d_out = d_out
        self.momentum = momentum
        self.eps = eps
        rng = make_rng(seed)
        bound = np.sqrt(6.0 / (d_in + d_out))
        self.weight = rng.uniform(-bound, bound, size=(d_in, d_out))
        self.gamma = np.ones(d_in)
        self.beta = np.zeros(d_in)
        self.running_mean = np.zeros(d_in)
        self.running_var = np.ones(d_in)

    def parameters(self) -> dict:
        return {"weight": self.weight, "gamma": self.gamma, "beta": self.beta}

    def state_dict(self) -> dict:
        return {
            "weight": self.weight.copy(),
            "gamma": self.gamma.copy(),
            "beta": self.beta.copy(),
            "running_mean": self.running_mean.copy(),
            "running_var": self.running_var.copy(),
        }

    def load_state_dict(self, state: dict):
        for name in ("weight", "gamma", "beta", "running_mean", "running_var"):
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != getattr(self, name).shape:
                raise ValueError(f"{name} shape {arr.shape} != expected {getattr(self, name).shape}")
            setattr(self, name, arr.copy())
        return self

    def forward(self, x: np.ndarray, train: bool):
        """Return (output, cache); cache feeds backward() when train=True."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"expected input of shape (b, {self.d_in}), got {x.shape}")
        b = x.shape[0]
        if train:
            if b < 2:
                raise ValueError(f"train-mode batch normalization needs at least 2 rows, got {b}")
            mean = x.mean(axis=0)
            var = x.var(axis=0)  # biased: divide by b
            self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean) * inv_std
        y = x_hat * self.gamma + self.beta
        out = y @ self.weight
        cache = {"train": train, "x_hat": x_hat, "inv_std": inv_std, "y": y, "b": b}
        return out, cache

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.forward(x, train=train)[0]

    def backward(self, grad_out: np.ndarray, cache: dict):
        """Gradients of a scalar loss given d loss / d output.

        Returns (grads, grad_input) where grads maps parameter name to
        gradient array matching parameters().
        """
        if not cache["train"]:
            raise RuntimeError("backward() requires a train-mode forward cache; eval-mode caches are not differentiable")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        x_hat, inv_std, y, b = cache["x_hat"], cache["inv_std"], cache["y"], cache["b"]
        if grad_out.shape != (b, self.d_out):
            raise ValueError(f"grad shape {grad_out.shape} != output shape {(b, self.d_out)}")

        grad_weight = y.T @ grad_out
        grad_y = grad_out @ self.weight.T
        grad_gamma = np.sum(grad_y * x_hat, axis=0)
        grad_beta = np.sum(grad_y, axis=0)

        # backprop through batch statistics (mean and biased variance)
        grad_xhat = grad_y * self.gamma
        grad_input = (
            inv_std
            / b
            * (b * grad_xhat - np.sum(grad_xhat, axis=0) - x_hat * np.sum(grad_xhat * x_hat, axis=0))
        )
        grads = {"weight": grad_weight, "gamma": grad_gamma, "beta": grad_beta}
        return grads, grad_input
