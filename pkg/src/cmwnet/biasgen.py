"""Synthetic biased-dataset generation.

Gaussian-mixture classification data with an exact posterior oracle, plus
the bias injectors: exponential long-tail subsampling, symmetric and
asymmetric label noise, posterior-margin-driven feature-dependent noise
(three flip-probability profiles), and hybrids. Injectors only ever touch
the observed labels; features and hidden clean labels are preserved.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GaussianMixtureSpec:
    means: np.ndarray          # (C, d)
    sigma: float               # shared isotropic std
    priors: np.ndarray         # (C,), sums to 1

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.priors = np.asarray(self.priors, dtype=np.float64)
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if abs(self.priors.sum() - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1")

    @property
    def C(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


def posterior(x: np.ndarray, spec: GaussianMixtureSpec) -> np.ndarray:
    """Exact Bayes posterior rows for x (n, d) -> (n, C); rows sum to 1.

    Computed in log space from the isotropic Gaussian class conditionals
    and the priors, so near-saturated points stay finite.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d2 = ((x[:, None, :] - spec.means[None, :, :]) ** 2).sum(axis=2)
    logp = -d2 / (2.0 * spec.sigma ** 2) + np.log(spec.priors)[None, :]
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


@dataclass
class Dataset:
    features: np.ndarray              # (n, d)
    observed_labels: np.ndarray       # (n,) int64
    clean_labels: np.ndarray          # (n,) int64, never read by training
    C: int
    mixture: GaussianMixtureSpec | None = None

    def __post_init__(self):
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        if self.observed_labels.min(initial=0) < 0 or \
                self.observed_labels.max(initial=0) >= self.C:
            raise ValueError("observed label out of range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        """Observed per-class sizes (these gate the task families)."""
        return np.bincount(self.observed_labels, minlength=self.C)

    def counts_per_sample(self) -> np.ndarray:
        return self.class_counts()[self.observed_labels]

    def noisy_mask(self) -> np.ndarray:
        return self.observed_labels != self.clean_labels

    def copy(self) -> "Dataset":
        return Dataset(self.features.copy(), self.observed_labels.copy(),
                       self.clean_labels.copy(), self.C, self.mixture)


# ---------------------------------------------------------------------------
# generation


def _class_means(C: int, d: int, separation: float) -> np.ndarray:
    """Class means with pairwise (simplex, if d >= C-1) or adjacent (circle)
    distance equal to `separation`."""
    if d >= C - 1 and C >= 2:
        # regular simplex: orthonormal corners shifted to zero mean
        eye = np.eye(C)
        simplex = eye - eye.mean(axis=0)
        simplex *= separation / np.sqrt(2.0)  # corner distance of eye is sqrt(2)
        basis = np.linalg.svd(simplex, full_matrices=False)[2][: C - 1]
        means = np.zeros((C, d))
        means[:, : C - 1] = simplex @ basis.T
        return means
    # circle in the first two coordinates, adjacent chord = separation
    radius = separation / (2.0 * np.sin(np.pi / C))
    ang = 2.0 * np.pi * np.arange(C) / C
    means = np.zeros((C, d))
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)
    return means


def make_gaussian_classes(C: int, d: int, n_per_class: int, separation: float,
                          sigma: float, seed: int) -> Dataset:
    """Balanced mixture draw with the posterior oracle attached."""
    if C < 2 or d < 1 or n_per_class < 1:
        raise ValueError("need C >= 2, d >= 1, n_per_class >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    spec = GaussianMixtureSpec(_class_means(C, d, separation), sigma,
                               np.full(C, 1.0 / C))
    labels = np.repeat(np.arange(C), n_per_class)
    x = spec.means[labels] + rng.normal(scale=sigma, size=(C * n_per_class, d))
    return Dataset(x, labels.copy(), labels.copy(), C, spec)


# ---------------------------------------------------------------------------
# long tail


def imbalance_factor(ds: Dataset) -> float:
    counts = ds.class_counts()
    if counts.min() == 0:
        raise ValueError("empty class")
    return counts.max() / counts.min()


def apply_longtail(ds: Dataset, factor: float, seed: int) -> Dataset:
    """Keep ceil(n_0 * mu^i) samples of class i, mu = factor^(-1/(C-1))."""
    if factor < 1:
        raise ValueError("imbalance factor must be >= 1")
    counts = ds.class_counts()
    if counts.min() != counts.max():
        raise ValueError("long-tail subsampling expects a balanced dataset")
    if factor == 1.0:
        return ds.copy()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n0 = counts[0]
    mu = factor ** (-1.0 / (ds.C - 1))
    keep_idx = []
    for c in range(ds.C):
        members = np.where(ds.observed_labels == c)[0]
        # epsilon guard: exact geometric values must not ceil one step up
        keep = int(np.ceil(n0 * mu ** c - 1e-9))
        keep_idx.append(rng.choice(members, size=keep, replace=False))
    idx = np.sort(np.concatenate(keep_idx))
    return Dataset(ds.features[idx], ds.observed_labels[idx],
                   ds.clean_labels[idx], ds.C, ds.mixture)


# ---------------------------------------------------------------------------
# feature-independent noise


def inject_symmetric(ds: Dataset, rate: float, seed: int,
                     exclude_true: bool = False) -> Dataset:
    """Resample labels of a uniform rate-fraction over all C classes.

    By default the replacement may coincide with the current label;
    exclude_true forces a different label.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    out = ds.copy()
    if rate == 0.0:
        return out
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_flip = int(round(rate * ds.n))
    chosen = rng.choice(ds.n, size=n_flip, replace=False)
    if exclude_true:
        shift = rng.integers(1, ds.C, size=n_flip)
        out.observed_labels[chosen] = (out.observed_labels[chosen] + shift) % ds.C
    else:
        out.observed_labels[chosen] = rng.integers(0, ds.C, size=n_flip)
    return out


def nearest_class_mapping(spec: GaussianMixtureSpec) -> dict[int, int]:
    """Each class -> class with the nearest mean (ties -> lower index)."""
    C = spec.C
    mapping = {}
    for c in range(C):
        d2 = ((spec.means - spec.means[c]) ** 2).sum(axis=1)
        d2[c] = np.inf
        mapping[c] = int(np.argmin(d2))
    return mapping


def inject_asymmetric(ds: Dataset, rate: float, seed: int,
                      mapping: dict[int, int] | None = None) -> Dataset:
    """Flip a rate-fraction of each class along its mapping edge."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0, 1]")
    if mapping is None:
        if ds.mixture is None:
            raise ValueError("no mapping given and no mixture to derive one")
        mapping = nearest_class_mapping(ds.mixture)
    for src, dst in mapping.items():
        if src == dst:
            raise ValueError(f"mapping sends class {src} to itself")
    out = ds.copy()
    if rate == 0.0:
        return out
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    for c in range(ds.C):
        members = np.where(ds.observed_labels == c)[0]
        n_flip = int(round(rate * members.size))
        chosen = rng.choice(members, size=n_flip, replace=False)
        out.observed_labels[chosen] = mapping[c]
    return out


# ---------------------------------------------------------------------------
# feature-dependent (posterior-margin) noise


def _margin_tau(delta: np.ndarray, noise_type: int) -> np.ndarray:
    """Raw flip probability from the top-two posterior margin delta in [0,1]."""
    if noise_type == 1:
        return 0.5 - 0.5 * delta ** 2
    if noise_type == 2:
        return 1.0 - delta ** 3
    if noise_type == 3:
        return 1.0 - (delta ** 3 + delta ** 2 + delta) / 3.0
    raise ValueError("noise_type must be 1, 2 or 3")


def inject_pmd(ds: Dataset, noise_type: int, level: float, seed: int) -> Dataset:
    """Flip top-posterior label to the runner-up with margin-shaped probability.

    Raw probabilities are scaled by one constant (bisection) so the mean flip
    probability over the dataset equals `level`; per-sample probabilities are
    clamped to [0, 1]. Samples whose clean label is not the top posterior
    class are left untouched.
    """
    if ds.mixture is None:
        raise ValueError("feature-dependent noise needs the posterior oracle")
    if not 0.0 <= level <= 1.0:
        raise ValueError("level must be in [0, 1]")
    out = ds.copy()
    if level == 0.0:
        return out
    eta = posterior(ds.features, ds.mixture)
    order = np.argsort(eta, axis=1)
    u = order[:, -1]
    s = order[:, -2]
    delta = eta[np.arange(ds.n), u] - eta[np.arange(ds.n), s]
    eligible = ds.clean_labels == u
    tau = _margin_tau(delta, noise_type) * eligible

    def mean_prob(c):
        return np.minimum(c * tau, 1.0).mean()

    # saturated limit: every sample with tau > 0 flips with probability 1
    max_rate = (tau > 0).mean()
    if max_rate < level - 1e-12:
        warnings.warn(
            f"requested flip rate {level} infeasible; achievable mean is "
            f"{max_rate:.4f}, proceeding with saturated probabilities")
        prob = (tau > 0).astype(float)
    else:
        lo, hi = 0.0, 1.0
        while mean_prob(hi) < level:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mean_prob(mid) < level:
                lo = mid
            else:
                hi = mid
        c = 0.5 * (lo + hi)
        prob = np.minimum(c * tau, 1.0)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    flip = rng.random(ds.n) < prob
    out.observed_labels[flip] = s[flip]
    return out


def inject_hybrid(ds: Dataset, pmd_type: int, pmd_level: float, extra: str,
                  extra_level: float, seed: int,
                  mapping: dict[int, int] | None = None) -> Dataset:
    """Feature-dependent noise first, then the feature-independent overlay."""
    r = np.random.default_rng(np.random.SeedSequence(seed))
    s1, s2 = (int(v) for v in r.integers(0, 2 ** 62, size=2))
    mid = inject_pmd(ds, pmd_type, pmd_level, s1)
    if extra == "symmetric":
        return inject_symmetric(mid, extra_level, s2)
    if extra == "asymmetric":
        return inject_asymmetric(mid, extra_level, s2, mapping)
    raise ValueError(f"unknown overlay kind {extra!r}")


# ---------------------------------------------------------------------------
# declarative bias chain

_BIAS_KINDS = ("longtail", "symmetric", "asymmetric", "pmd1", "pmd2", "pmd3",
               "hybrid")


@dataclass
class BiasSpec:
    kind: str
    level: float = 0.0
    imbalance_factor: float = 1.0
    seed: int = 0
    extra: str = "symmetric"       # hybrid overlay kind
    extra_level: float = 0.0
    pmd_type: int = 1              # hybrid feature-dependent component

    def __post_init__(self):
        if self.kind not in _BIAS_KINDS:
            raise ValueError(f"unknown bias kind {self.kind!r}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError("level must be in [0, 1]")
        if self.imbalance_factor < 1.0:
            raise ValueError("imbalance_factor must be >= 1")

    def apply(self, ds: Dataset) -> Dataset:
        if self.kind == "longtail":
            return apply_longtail(ds, self.imbalance_factor, self.seed)
        if self.kind == "symmetric":
            return inject_symmetric(ds, self.level, self.seed)
        if self.kind == "asymmetric":
            return inject_asymmetric(ds, self.level, self.seed)
        if self.kind in ("pmd1", "pmd2", "pmd3"):
            return inject_pmd(ds, int(self.kind[-1]), self.level, self.seed)
        return inject_hybrid(ds, self.pmd_type, self.level, self.extra,
                             self.extra_level, self.seed)


# ---------------------------------------------------------------------------
# file formats

_MAGIC = b"CMWD"
_VERSION = 1
_FLAG_MIXTURE = 1


def save_dataset(path, ds: Dataset) -> None:
    flags = _FLAG_MIXTURE if ds.mixture is not None else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQQQI", _VERSION, ds.n, ds.d, ds.C, flags))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.observed_labels, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ds.clean_labels, dtype="<i8").tobytes())
        if ds.mixture is not None:
            fh.write(np.ascontiguousarray(ds.mixture.means, dtype="<f8").tobytes())
            fh.write(struct.pack("<d", ds.mixture.sigma))
            fh.write(np.ascontiguousarray(ds.mixture.priors, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        version, n, d, C, flags = struct.unpack("<IQQQI", fh.read(32))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        feats = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        obs = np.frombuffer(fh.read(8 * n), dtype="<i8").copy()
        clean = np.frombuffer(fh.read(8 * n), dtype="<i8").copy()
        mixture = None
        if flags & _FLAG_MIXTURE:
            means = np.frombuffer(fh.read(8 * C * d), dtype="<f8").reshape(C, d).copy()
            (sigma,) = struct.unpack("<d", fh.read(8))
            priors = np.frombuffer(fh.read(8 * C), dtype="<f8").copy()
            mixture = GaussianMixtureSpec(means, sigma, priors)
    return Dataset(feats, obs, clean, int(C), mixture)


def export_csv(path, ds: Dataset) -> None:
    """One row per sample: features..., observed, clean."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.d)] + ["observed", "clean"])
        for i in range(ds.n):
            writer.writerow([f"{v:.17g}" for v in ds.features[i]]
                            + [int(ds.observed_labels[i]), int(ds.clean_labels[i])])
