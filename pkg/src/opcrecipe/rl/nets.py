"""Small tanh MLPs with hand-written backprop and Adam.

Gradients are exact (they are checked against central finite differences in
the test suite), and every forward through the policy head bumps a module
counter so pipelines can prove they never consulted the policy.
"""

from __future__ import annotations

import numpy as np

_POLICY_EVALS = 0


def policy_eval_count() -> int:
    return _POLICY_EVALS


def reset_policy_eval_count():
    global _POLICY_EVALS
    _POLICY_EVALS = 0


class Mlp:
    """Fully connected net: tanh hidden layers, linear head."""

    def __init__(self, sizes, rng: np.random.Generator):
        self.sizes = tuple(sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a (N, in) batch."""
        h = np.asarray(x, dtype=np.float64)
        cache = [h]
        last = len(self.weights) - 1
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if li == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, d_out: np.ndarray, cache):
        """Parameter gradients for d(loss)/d(output) = d_out."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = d_out
        for li in range(len(self.weights) - 1, -1, -1):
            h_in = cache[li]
            grads_w[li] = h_in.T @ delta
            grads_b[li] = delta.sum(axis=0)
            if li > 0:
                # cache[li] holds tanh activations for hidden layers
                delta = (delta @ self.weights[li].T) * (1.0 - cache[li] ** 2)
        return grads_w, grads_b

    def params(self):
        return self.weights + self.biases

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat_params(self, flat: np.ndarray):
        i = 0
        for p in self.params():
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def to_lists(self):
        return {"sizes": list(self.sizes),
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_lists(cls, obj):
        net = cls.__new__(cls)
        net.sizes = tuple(obj["sizes"])
        net.weights = [np.array(w, dtype=np.float64) for w in obj["weights"]]
        net.biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
        return net


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class PolicyNet:
    """Softmax policy over 2C+1 discrete tangential-move classes."""

    def __init__(self, state_dim: int, n_actions: int, hidden, rng,
                 zero_action_bias: float = 0.0):
        self.n_actions = n_actions
        self.mlp = Mlp((state_dim,) + tuple(hidden) + (n_actions,), rng)
        if zero_action_bias:
            # prior toward the no-move class: recipes start from "leave it be"
            self.mlp.biases[-1][n_actions // 2] = zero_action_bias

    def forward(self, states: np.ndarray):
        global _POLICY_EVALS
        states = np.atleast_2d(states)
        _POLICY_EVALS += states.shape[0]
        logits, cache = self.mlp.forward(states)
        logp = log_softmax(logits)
        return np.exp(logp), logp, cache

    def probs(self, states: np.ndarray) -> np.ndarray:
        return self.forward(states)[0]

    def log_probs(self, states: np.ndarray) -> np.ndarray:
        return self.forward(states)[1]


class ValueNet:
    def __init__(self, state_dim: int, hidden, rng):
        self.mlp = Mlp((state_dim,) + tuple(hidden) + (1,), rng)

    def forward(self, states: np.ndarray):
        out, cache = self.mlp.forward(np.atleast_2d(states))
        return out[:, 0], cache

    def predict(self, states: np.ndarray) -> np.ndarray:
        return self.forward(states)[0]


class Adam:
    """Adaptive-moment gradient steps on a list of parameter arrays."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)
