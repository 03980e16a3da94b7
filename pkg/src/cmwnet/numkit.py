"""Dense float64 numeric primitives.

Activations and losses with hand-derived gradients, first-order optimizers,
seeded RNG construction, and the central finite-difference oracle used by
the test suite. No autodiff anywhere: every backward pass in this package
is written out explicitly.
"""

from __future__ import annotations

import numpy as np


def rng_from_seed(seed: int) -> np.random.Generator:
    """Deterministic generator (PCG64); same seed gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent deterministic child generators derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# activations


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    # derivative at exactly 0 is defined as 0
    return (x > 0).astype(np.float64)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad_from_value(s):
    """Derivative given the forward value s = sigmoid(x)."""
    return s * (1.0 - s)


def affine_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ValueError(
            f"affine shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}"
        )
    return x @ W + b


# ---------------------------------------------------------------------------
# softmax cross-entropy


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with log-sum-exp stabilization."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Per-sample CE loss and gradient w.r.t. the logits.

    loss_i = -log softmax(logits_i)[y_i], grad_i = softmax(logits_i) - onehot(y_i).
    """
    labels = np.asarray(labels)
    n, C = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
        raise IndexError(f"label out of range [0, {C})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = logsumexp - z[np.arange(n), labels]
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad


def soft_xent(logits: np.ndarray, targets: np.ndarray):
    """CE against soft target rows (rows of `targets` sum to 1).

    loss_i = -targets_i . log softmax(logits_i), grad_i = softmax_i - targets_i.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -(targets * logp).sum(axis=1)
    grad = softmax(logits) - targets
    return loss, grad


# ---------------------------------------------------------------------------
# optimizers (operate in place on lists of parameter arrays)


class SgdMomentum:
    """SGD with classical momentum and optional decoupled-from-nothing L2."""

    kind = "sgd-momentum"

    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.step_count = 0
        self.buffers: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        if self.buffers is None:
            self.buffers = [np.zeros_like(p) for p in params]
        for p, g, buf in zip(params, grads, self.buffers):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            d = g + self.weight_decay * p if self.weight_decay else g
            buf *= self.momentum
            buf += d
            p -= self.lr * buf
        self.step_count += 1

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, buf in enumerate(self.buffers or []):
            out[f"momentum_{i}"] = buf
        return out


class Adam:
    """Adam with bias correction; weight decay added to the gradient."""

    kind = "adam"

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ValueError("params/grads length mismatch")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            d = g + self.weight_decay * p if self.weight_decay else g
            m *= self.beta1
            m += (1.0 - self.beta1) * d
            v *= self.beta2
            v += (1.0 - self.beta2) * d * d
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, m in enumerate(self.m or []):
            out[f"adam_m_{i}"] = m
        for i, v in enumerate(self.v or []):
            out[f"adam_v_{i}"] = v
        return out


def make_optimizer(kind: str, **kwargs):
    if kind == "sgd-momentum":
        return SgdMomentum(**kwargs)
    if kind == "adam":
        return Adam(**kwargs)
    raise ValueError(f"unknown optimizer kind {kind!r}")


# ---------------------------------------------------------------------------
# flattening helpers and the finite-difference oracle


def flatten(arrays: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def unflatten_like(vec: np.ndarray, arrays: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    i = 0
    for a in arrays:
        out.append(vec[i:i + a.size].reshape(a.shape))
        i += a.size
    if i != vec.size:
        raise ValueError(f"flat vector length {vec.size} != parameter count {i}")
    return out


def finite_diff_grad(f, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient estimate of scalar f at theta."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += eps
        tm[i] -= eps
        fp = f(tp)
        fm = f(tm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad
