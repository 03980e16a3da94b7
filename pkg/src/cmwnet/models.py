"""The two fixed architectures and their hand-derived gradients.

Classifier: softmax MLP f(x; w) with ReLU hidden layers.
Weighting net: shared 1 -> H ReLU hidden layer feeding K sigmoid heads,
gated by a one-hot over task families (selected by nearest class-size
center), so each sample receives the weight of its family's head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numkit
from .numkit import relu, relu_grad, sigmoid, softmax, softmax_xent, soft_xent

DEFAULT_HIDDEN = 100
DEFAULT_LOSS_CLAMP = 50.0


def _fan_in_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


class Classifier:
    """MLP over float64 arrays; parameters live in self.weights/self.biases."""

    def __init__(self, sizes: list[int], weights: list[np.ndarray],
                 biases: list[np.ndarray]):
        self.sizes = list(sizes)
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator) -> "Classifier":
        weights, biases = [], []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            weights.append(_fan_in_uniform(rng, d_in, d_out))
            bound = 1.0 / np.sqrt(d_in)
            biases.append(rng.uniform(-bound, bound, size=d_out))
        return cls(sizes, weights, biases)

    # -- parameter plumbing ------------------------------------------------

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return numkit.flatten(self.params)

    def set_flat(self, vec: np.ndarray) -> None:
        arrays = numkit.unflatten_like(vec, self.params)
        n_layers = len(self.weights)
        for i in range(n_layers):
            self.weights[i] = arrays[i]
            self.biases[i] = arrays[n_layers + i]

    def copy(self) -> "Classifier":
        return Classifier(self.sizes, [w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    # -- forward / backward ------------------------------------------------

    def _forward_cached(self, x: np.ndarray):
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"feature dim {x.shape[1]} != {self.sizes[0]}")
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for li, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            pre.append(z)
            h = z if li == last else relu(z)
            acts.append(h)
        return acts, pre

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities, rows summing to 1."""
        acts, _ = self._forward_cached(x)
        return softmax(acts[-1])

    def losses(self, x: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Per-sample CE losses; targets may be int labels or soft rows."""
        acts, _ = self._forward_cached(x)
        logits = acts[-1]
        if targets.ndim == 1:
            loss, _ = softmax_xent(logits, targets)
        else:
            loss, _ = soft_xent(logits, targets)
        return loss

    def _backward(self, acts, pre, dlogits):
        """Batched backward; returns per-layer (dW, db) summed over the batch
        when dlogits carries the batch scaling, and the per-layer deltas."""
        deltas = [None] * len(self.weights)
        delta = dlogits
        for li in range(len(self.weights) - 1, -1, -1):
            deltas[li] = delta
            if li > 0:
                delta = (delta @ self.weights[li].T) * relu_grad(pre[li - 1])
        return deltas

    def mean_grad(self, x: np.ndarray, targets: np.ndarray):
        """(mean loss, grads list aligned with self.params)."""
        acts, pre = self._forward_cached(x)
        logits = acts[-1]
        n = x.shape[0]
        if targets.ndim == 1:
            loss, dlogits = softmax_xent(logits, targets)
        else:
            loss, dlogits = soft_xent(logits, targets)
        deltas = self._backward(acts, pre, dlogits / n)
        gw = [acts[li].T @ deltas[li] for li in range(len(self.weights))]
        gb = [deltas[li].sum(axis=0) for li in range(len(self.weights))]
        return loss.mean(), gw + gb

    def per_sample_grads(self, x: np.ndarray, targets: np.ndarray):
        """(per-sample losses [n], per-sample flat gradients [n x P]).

        Row j is the gradient of sample j's own loss w.r.t. all parameters,
        flattened in self.params order.
        """
        acts, pre = self._forward_cached(x)
        logits = acts[-1]
        n = x.shape[0]
        if targets.ndim == 1:
            loss, dlogits = softmax_xent(logits, targets)
        else:
            loss, dlogits = soft_xent(logits, targets)
        deltas = self._backward(acts, pre, dlogits)
        parts_w, parts_b = [], []
        for li in range(len(self.weights)):
            gw = np.einsum("ni,nj->nij", acts[li], deltas[li]).reshape(n, -1)
            parts_w.append(gw)
            parts_b.append(deltas[li])
        return loss, np.concatenate(parts_w + parts_b, axis=1)


# ---------------------------------------------------------------------------
# task-family gating


def nearest_family(count: float, centers: np.ndarray) -> int:
    """Index of the nearest center; ties broken toward the smaller center."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.size == 0:
        raise ValueError("empty center list")
    return int(np.argmin(np.abs(centers - count)))


def family_onehot(count: float, centers: np.ndarray) -> np.ndarray:
    out = np.zeros(len(centers))
    out[nearest_family(count, centers)] = 1.0
    return out


class WeightNet:
    """Loss -> per-family weight net: shared hidden layer, K sigmoid heads."""

    def __init__(self, W1, b1, W2, b2, loss_clamp: float | None = DEFAULT_LOSS_CLAMP):
        self.W1 = W1  # (1, H)
        self.b1 = b1  # (H,)
        self.W2 = W2  # (H, K)
        self.b2 = b2  # (K,)
        self.loss_clamp = loss_clamp

    @classmethod
    def init(cls, K: int, rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN,
             loss_clamp: float | None = DEFAULT_LOSS_CLAMP) -> "WeightNet":
        if K < 1:
            raise ValueError("K must be >= 1")
        W1 = _fan_in_uniform(rng, 1, hidden)
        b1 = rng.uniform(-1.0, 1.0, size=hidden)
        W2 = _fan_in_uniform(rng, hidden, K)
        b2 = np.zeros(K)  # heads start near 0.5
        return cls(W1, b1, W2, b2, loss_clamp)

    @property
    def K(self) -> int:
        return self.W2.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return numkit.flatten(self.params)

    def set_flat(self, vec: np.ndarray) -> None:
        self.W1, self.b1, self.W2, self.b2 = numkit.unflatten_like(vec, self.params)

    def copy(self) -> "WeightNet":
        return WeightNet(self.W1.copy(), self.b1.copy(), self.W2.copy(),
                         self.b2.copy(), self.loss_clamp)

    def _clamped(self, losses: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(losses)):
            raise ValueError("non-finite loss input to weight net")
        if self.loss_clamp is not None:
            return np.minimum(losses, self.loss_clamp)
        return losses

    def forward(self, losses: np.ndarray) -> np.ndarray:
        """All K head outputs for each loss; shape (n, K), entries in (0, 1)."""
        ell = self._clamped(np.atleast_1d(np.asarray(losses, dtype=np.float64)))
        h = relu(ell[:, None] @ self.W1 + self.b1)
        return sigmoid(h @ self.W2 + self.b2)

    def weight_and_grad(self, losses: np.ndarray, fam: np.ndarray):
        """Per-sample gated weight v_j = head[fam_j](loss_j) and dv_j/dTheta.

        Returns (v [n], dv [n x PTheta]) with dv rows flattened in params order.
        """
        ell = self._clamped(np.atleast_1d(np.asarray(losses, dtype=np.float64)))
        fam = np.atleast_1d(np.asarray(fam))
        n = ell.shape[0]
        H = self.hidden
        z1 = ell[:, None] @ self.W1 + self.b1           # (n, H)
        h = relu(z1)
        z2 = np.einsum("nh,hn->n", h, self.W2[:, fam]) + self.b2[fam]
        v = sigmoid(z2)
        # backward for the selected head only
        dz2 = v * (1.0 - v)                             # (n,)
        dW2 = np.zeros((n, H, self.K))
        dW2[np.arange(n), :, fam] = dz2[:, None] * h
        db2 = np.zeros((n, self.K))
        db2[np.arange(n), fam] = dz2
        dh = dz2[:, None] * self.W2[:, fam].T           # (n, H)
        dz1 = dh * relu_grad(z1)
        dW1 = dz1 * ell[:, None]                        # (n, H) == (n, 1*H)
        db1 = dz1
        dv = np.concatenate(
            [dW1.reshape(n, -1), db1, dW2.reshape(n, -1), db2], axis=1)
        return v, dv

    def weight(self, losses: np.ndarray, fam: np.ndarray) -> np.ndarray:
        v, _ = self.weight_and_grad(losses, fam)
        return v


def cmw_weight(loss: float, count: float, wnet: WeightNet, centers: np.ndarray):
    """Weight of one sample plus its gradient w.r.t. the weight-net params."""
    fam = nearest_family(count, centers)
    v, dv = wnet.weight_and_grad(np.array([loss]), np.array([fam]))
    return float(v[0]), dv[0]


# ---------------------------------------------------------------------------
# checkpoint serialization: named float64 arrays + JSON sidecar

_MAGIC = b"CMWC"
_VERSION = 1


def write_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def read_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            out[name] = data.copy()
        return out


def save_checkpoint(path, clf: Classifier, wnet: WeightNet | None = None,
                    centers: np.ndarray | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Binary parameter file plus a JSON sidecar describing the architecture."""
    path = str(path)
    arrays: dict[str, np.ndarray] = {}
    for i, w in enumerate(clf.weights):
        arrays[f"clf_W_{i}"] = w
    for i, b in enumerate(clf.biases):
        arrays[f"clf_b_{i}"] = b
    sidecar = {
        "classifier_sizes": clf.sizes,
        "weightnet": None,
        "centers": None,
    }
    if wnet is not None:
        arrays["wn_W1"] = wnet.W1
        arrays["wn_b1"] = wnet.b1
        arrays["wn_W2"] = wnet.W2
        arrays["wn_b2"] = wnet.b2
        sidecar["weightnet"] = {
            "hidden": wnet.hidden,
            "K": wnet.K,
            "loss_clamp": wnet.loss_clamp,
        }
    if centers is not None:
        sidecar["centers"] = [float(c) for c in centers]
    if extra_arrays:
        arrays.update(extra_arrays)
    if meta:
        sidecar.update(meta)
    write_arrays(path, arrays)
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class Checkpoint:
    classifier: Classifier
    weightnet: WeightNet | None
    centers: np.ndarray | None
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    sidecar: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    path = str(path)
    arrays = read_arrays(path)
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    sizes = sidecar["classifier_sizes"]
    n_layers = len(sizes) - 1
    clf = Classifier(
        sizes,
        [arrays[f"clf_W_{i}"] for i in range(n_layers)],
        [arrays[f"clf_b_{i}"] for i in range(n_layers)],
    )
    wnet = None
    if sidecar.get("weightnet"):
        wnet = WeightNet(arrays["wn_W1"], arrays["wn_b1"], arrays["wn_W2"],
                         arrays["wn_b2"], sidecar["weightnet"]["loss_clamp"])
    centers = None
    if sidecar.get("centers") is not None:
        centers = np.asarray(sidecar["centers"], dtype=np.float64)
    return Checkpoint(clf, wnet, centers, arrays, sidecar)
