"""Losses, gradients, and curvature constants for the two experiment families."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, log_softmax, softmax


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ValueError(f"features must be an N x p matrix with N >= 1, got shape {a.shape}")
        if y.shape != (a.shape[0],):
            raise ValueError(f"labels must have length {a.shape[0]}, got shape {y.shape}")
        if not np.isfinite(a).all():
            raise ValueError("features contain non-finite values")
        object.__setattr__(self, "features", a)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> Dataset:
        return Dataset(self.features[idx], self.labels[idx])


class UnsupportedError(ValueError):
    pass


@dataclass(frozen=True)
class Curvature:
    """Smoothness ``L`` and, when defined, strong convexity ``mu``.

    Unpacks as ``L, mu = curvature``; reading ``mu`` of a non-convex
    objective raises :class:`UnsupportedError`.
    """

    L: float
    mu_value: float | None

    @property
    def mu(self) -> float:
        if self.mu_value is None:
            raise UnsupportedError("strong convexity constant is undefined for this objective")
        return self.mu_value

    @property
    def strongly_convex(self) -> bool:
        return self.mu_value is not None and self.mu_value > 0

    def __iter__(self):
        yield self.L
        yield self.mu


@dataclass(frozen=True)
class LogisticL2:
    """Binary logistic loss on labels in {-1, +1} plus ``lam/2 * ||x||^2``."""

    lam: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    def n_params(self, data: Dataset) -> int:
        return data.dim

    def init_params(self, data: Dataset, rng=None) -> np.ndarray:
        return np.zeros(data.dim)

    def _check(self, x, data):
        x = np.asarray(x, dtype=float)
        if x.shape != (data.dim,):
            raise ValueError(f"parameter has shape {x.shape}, objective expects ({data.dim},)")
        return x

    def loss(self, x, data: Dataset) -> float:
        x = self._check(x, data)
        margins = data.labels * (data.features @ x)
        return float(-np.mean(log_expit(margins)) + 0.5 * self.lam * (x @ x))

    def _grad_rows(self, x, a, y):
        # d/dx log(1 + exp(-y a.x)) = -y * sigmoid(-y a.x) * a
        return -(y * expit(-y * (a @ x)))

    def grad(self, x, data: Dataset) -> np.ndarray:
        x = self._check(x, data)
        w = self._grad_rows(x, data.features, data.labels)
        return data.features.T @ w / data.n_samples + self.lam * x

    def batch_grad(self, x, data: Dataset, idx) -> np.ndarray:
        return self.rows_grad(x, data.features[idx], data.labels[idx])

    def rows_grad(self, x, a, y) -> np.ndarray:
        """Mean gradient over the rows ``a`` with labels ``y``."""
        w = -(y * expit(-y * (a @ x)))
        return (w @ a) / len(y) + self.lam * x

    def sample_grads(self, x, data: Dataset) -> np.ndarray:
        """Per-sample gradients, shape (N, p)."""
        x = self._check(x, data)
        w = self._grad_rows(x, data.features, data.labels)
        return w[:, None] * data.features + self.lam * x

    def constants(self, data: Dataset) -> Curvature:
        top = top_eigenvalue(data.features.T @ data.features / data.n_samples)
        return Curvature(top / 4 + self.lam, self.lam)

    @property
    def strongly_convex(self) -> bool:
        return self.lam > 0


@dataclass(frozen=True)
class MLP:
    """Fully connected net, smooth hidden activation, softmax cross-entropy.

    ``layer_sizes`` runs from input width to class count, e.g. ``(10, 32, 3)``.
    Parameters are one flat vector: for each layer, the weight matrix
    (row-major, fan_in x fan_out) followed by the bias.
    """

    layer_sizes: tuple[int, ...] = (10, 32, 3)
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"layer sizes must be >= 1 with at least two layers, got {self.layer_sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(_ACTIVATIONS)}")

    @property
    def strongly_convex(self) -> bool:
        return False

    def n_params(self, data: Dataset | None = None) -> int:
        sizes = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))

    def init_params(self, data: Dataset | None, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def _unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_params(),):
            raise ValueError(f"parameter has shape {x.shape}, objective expects ({self.n_params()},)")
        layers, pos = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = x[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
            pos += fan_in * fan_out
            layers.append((w, x[pos : pos + fan_out]))
            pos += fan_out
        return layers

    def _forward(self, layers, a):
        act, _ = _ACTIVATIONS[self.activation]
        hs = [a]
        for w, b in layers[:-1]:
            hs.append(act(hs[-1] @ w + b))
        w, b = layers[-1]
        return hs, hs[-1] @ w + b

    def _check_data(self, data):
        if data.dim != self.layer_sizes[0]:
            raise ValueError(f"data has {data.dim} features, network expects {self.layer_sizes[0]}")

    def loss(self, x, data: Dataset) -> float:
        self._check_data(data)
        _, logits = self._forward(self._unpack(x), data.features)
        labels = data.labels.astype(np.int64)
        return float(-np.mean(log_softmax(logits, axis=1)[np.arange(data.n_samples), labels]))

    def _backprop(self, x, a, labels):
        layers = self._unpack(x)
        _, dact = _ACTIVATIONS[self.activation]
        hs, logits = self._forward(layers, a)
        delta = softmax(logits, axis=1)
        delta[np.arange(len(labels)), labels] -= 1.0
        delta /= len(labels)
        grads = []
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads.append((hs[i].T @ delta, delta.sum(axis=0)))
            if i:
                delta = (delta @ w.T) * dact(hs[i])
        out = []
        for gw, gb in reversed(grads):
            out += [gw.ravel(), gb]
        return np.concatenate(out)

    def grad(self, x, data: Dataset) -> np.ndarray:
        self._check_data(data)
        return self._backprop(x, data.features, data.labels.astype(np.int64))

    def batch_grad(self, x, data: Dataset, idx) -> np.ndarray:
        return self.rows_grad(x, data.features[idx], data.labels[idx])

    def rows_grad(self, x, a, y) -> np.ndarray:
        """Mean gradient over the rows ``a`` with labels ``y``."""
        return self._backprop(x, a, y.astype(np.int64))

    def sample_grads(self, x, data: Dataset) -> np.ndarray:
        return np.stack([self.batch_grad(x, data, [i]) for i in range(data.n_samples)])

    def constants(self, data: Dataset, seed: int = 0) -> Curvature:
        """Empirical ``L`` from Hessian power iteration at a few seeded points."""
        rng = np.random.default_rng(seed)
        x0 = self.init_params(data, rng)
        points = [x0, x0 + 0.5 * rng.standard_normal(x0.size) / np.sqrt(x0.size), 2.0 * x0]
        return Curvature(estimate_smoothness(self, data, points), None)


# activation and its derivative expressed through the activation's output
_ACTIVATIONS = {
    "tanh": (np.tanh, lambda h: 1.0 - h * h),
    "sigmoid": (expit, lambda h: h * (1.0 - h)),
}

Objective = LogisticL2 | MLP


def loss(obj: Objective, x, data: Dataset) -> float:
    return obj.loss(x, data)


def grad(obj: Objective, x, data: Dataset) -> np.ndarray:
    return obj.grad(x, data)


def sample_indices(n: int, batch: int, rng: np.random.Generator, replace: bool = True, size=None) -> np.ndarray:
    """``batch`` row indices of an ``n``-row shard; ``size`` reshapes a with-replacement draw."""
    if n < 1:
        raise ValueError("empty shard")
    if batch < 1 or batch > n:
        raise ValueError(f"batch must be in [1, {n}], got {batch}")
    if replace:
        return rng.integers(0, n, size=batch if size is None else size)
    return rng.permutation(n)[:batch]


def stoch_grad(obj: Objective, x, shard: Dataset, batch: int, rng: np.random.Generator, replace: bool = True):
    """Mean gradient over ``batch`` samples drawn uniformly from ``shard``.

    Sampling is with replacement; ``replace=False`` draws distinct samples.
    """
    n = shard.features.shape[0]
    if replace and 1 <= batch <= n:
        idx = rng.integers(0, n, size=batch)
    else:
        idx = sample_indices(n, batch, rng, replace)
    return obj.batch_grad(np.asarray(x, dtype=float), shard, idx)


def constants(obj: Objective, data: Dataset) -> Curvature:
    """Smoothness ``L`` and strong convexity ``mu`` (``mu`` for logistic only)."""
    return obj.constants(data)


def top_eigenvalue(m: np.ndarray, tol: float = 1e-13, max_iter: int = 100_000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    m = np.asarray(m, dtype=float)
    v = np.ones(m.shape[0]) / np.sqrt(m.shape[0])
    # a deterministic, non-degenerate start vector
    v = v + np.linspace(0.0, 1.0, m.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v_next = w / norm
        lam_next = float(v_next @ m @ v_next)
        if abs(lam_next - lam) <= tol * max(1.0, abs(lam_next)):
            return lam_next
        v, lam = v_next, lam_next
    return lam


def estimate_smoothness(obj: Objective, data: Dataset, points, iters: int = 50, eps: float = 1e-5) -> float:
    """Largest |Hessian eigenvalue| over ``points`` by power iteration on
    finite-difference Hessian-vector products."""
    best = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        v = np.linspace(1.0, 2.0, x.size)
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(iters):
            hv = (obj.grad(x + eps * v, data) - obj.grad(x - eps * v, data)) / (2 * eps)
            lam = float(np.linalg.norm(hv))
            if lam == 0.0:
                break
            v = hv / lam
        best = max(best, lam)
    return best


def estimate_sigma2(obj: Objective, shards, points) -> float:
    """Max over reference points and shards of the per-sample gradient
    variance ``E||g_xi - grad f_i||^2`` (single-sample stochastic gradient)."""
    worst = 0.0
    for x in points:
        for shard in shards:
            g = obj.sample_grads(x, shard)
            dev = g - g.mean(axis=0)
            worst = max(worst, float(np.einsum("ij,ij->", dev, dev)) / shard.n_samples)
    return worst
