"""Student networks whose outputs feed the projection head.

Two variants share one interface (forward/backward/parameters):

* IdentityStudent passes embeddings through unchanged — the default when
  the student representation is already fixed and only the head trains.
* MlpStudent is a fully connected net with exact (erf-based) GELU on the
  hidden layers and a linear output layer of the same width as its input,
  so the head's input dimension never depends on the student choice.
"""

import numpy as np

from ..rng import make_rng


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    from scipy.special import erf

    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    from scipy.special import erf

    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


class IdentityStudent:
    """No-op student: forward is the identity, there is nothing to train."""

    def __init__(self, d: int):
        if d < 1:
            raise ValueError(f"need d >= 1, got {d}")
        self.d = d

    def parameters(self) -> dict:
        return {}

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected input of shape (b, {self.d}), got {x.shape}")
        return x, None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, grad_out: np.ndarray, cache):
        return {}, np.asarray(grad_out, dtype=np.float64)


class MlpStudent:
    """Fully connected student; hidden layers use GELU, output layer is linear.

    Weights are Xavier-uniform (+-sqrt(6/(fan_in+fan_out))), biases start
    at zero. The output width equals the input width.
    """

    def __init__(self, d: int, hidden: tuple = (), seed: int = 0):
        if d < 1:
            raise ValueError(f"need d >= 1, got {d}")
        self.d = d
        self.hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be >= 1, got {hidden}")
        rng = make_rng(seed)
        dims = [d, *self.hidden, d]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def parameters(self) -> dict:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"w{i}"] = w
            params[f"b{i}"] = b
        return params

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ValueError(f"expected input of shape (b, {self.d}), got {x.shape}")
        activations = [x]  # inputs to each layer
        pre_acts = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_acts.append(z)
            h = gelu(z) if i < last else z
            activations.append(h)
        return h, {"activations": activations, "pre_acts": pre_acts}

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, grad_out: np.ndarray, cache: dict):
        grads = {}
        grad = np.asarray(grad_out, dtype=np.float64)
        activations, pre_acts = cache["activations"], cache["pre_acts"]
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i < last:
                grad = grad * gelu_grad(pre_acts[i])
            grads[f"w{i}"] = activations[i].T @ grad
            grads[f"b{i}"] = grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return grads, grad


def make_student(kind: str, d: int, hidden: tuple = (256,), seed: int = 0):
    if kind == "identity":
        return IdentityStudent(d)
    if kind == "mlp":
        return MlpStudent(d, hidden=hidden, seed=seed)
    raise ValueError(f"unknown student kind {kind!r}; expected 'identity' or 'mlp'")
