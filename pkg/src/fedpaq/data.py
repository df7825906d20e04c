"""Synthetic problems with known optima, IDX ingestion, and i.i.d. sharding."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .objectives import Dataset, LogisticL2
from .rng import Purpose, stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DATASET_MAGIC = b"FPQD"
DATASET_VERSION = 1


class SolverError(RuntimeError):
    pass


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodeShard:
    node_id: int
    data: Dataset
    stream_key: int
    indices: np.ndarray  # rows of the global dataset held by this node


# -- synthetic problems ------------------------------------------------------


def solve_logreg(obj: LogisticL2, data: Dataset, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Damped Newton on the full-batch regularized logistic loss."""
    if obj.lam <= 0:
        raise SolverError("Newton solve needs lam > 0")
    a, y = data.features, data.labels
    x = np.zeros(data.dim)
    for _ in range(max_iter):
        g = obj.grad(x, data)
        if np.linalg.norm(g) <= tol:
            return x
        z = a @ x
        w = 1.0 / (1.0 + np.exp(-z)) * (1.0 / (1.0 + np.exp(z)))
        h = (a.T * w) @ a / data.n_samples + obj.lam * np.eye(data.dim)
        step = np.linalg.solve(h, g)
        f0, t = obj.loss(x, data), 1.0
        slope = float(g @ step)
        while obj.loss(x - t * step, data) > f0 - 1e-4 * t * slope and t > 1e-10:
            t *= 0.5
        x = x - t * step
    g = obj.grad(x, data)
    if np.linalg.norm(g) <= tol:
        return x
    raise SolverError(f"Newton did not reach gradient norm {tol}; last {np.linalg.norm(g):.3e}")


def gen_synthetic_logreg(n_samples: int, dim: int, lam: float, seed: int, scale: float = 1.0):
    """Gaussian features, labels from a planted logistic model.

    Returns ``(dataset, x_star, f_star)`` with ``x_star`` solved to gradient
    norm <= 1e-10.
    """
    if not n_samples >= dim >= 1:
        raise ValueError(f"need n_samples >= dim >= 1, got N={n_samples}, p={dim}")
    if lam <= 0:
        raise ValueError(f"lam must be > 0, got {lam}")
    rng = stream(seed, Purpose.DATA)
    a = rng.standard_normal((n_samples, dim)) * (scale / np.sqrt(dim))
    planted = rng.standard_normal(dim) * 2.0
    prob = 1.0 / (1.0 + np.exp(-(a @ planted)))
    y = np.where(rng.random(n_samples) < prob, 1.0, -1.0)
    data = Dataset(a, y)
    obj = LogisticL2(lam)
    x_star = solve_logreg(obj, data)
    return data, x_star, obj.loss(x_star, data)


def gen_synthetic_multiclass(n_samples: int, dim: int, classes: int, seed: int, hidden: int = 16, temperature: float = 0.5):
    """Gaussian inputs labelled by sampling from a random tanh teacher network."""
    if n_samples < 1 or dim < 1 or classes < 2:
        raise ValueError(f"bad shape: N={n_samples}, d={dim}, classes={classes}")
    rng = stream(seed, Purpose.DATA)
    a = rng.standard_normal((n_samples, dim))
    w1 = rng.standard_normal((dim, hidden)) / np.sqrt(dim)
    w2 = rng.standard_normal((hidden, classes)) * 2.0
    logits = np.tanh(a @ w1) @ w2 / temperature
    gumbel = -np.log(-np.log(rng.random((n_samples, classes))))
    labels = np.argmax(logits + gumbel, axis=1)
    return Dataset(a, labels.astype(np.int64))


# -- sharding ----------------------------------------------------------------


def partition_iid(data: Dataset, n: int, seed: int) -> list[NodeShard]:
    """Random permutation of the rows cut into ``n`` near-equal contiguous blocks."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if data.n_samples < n:
        raise ValueError(f"cannot split {data.n_samples} samples across {n} nodes")
    if n == 1:
        return [NodeShard(0, data, 0, np.arange(data.n_samples))]
    perm = stream(seed, Purpose.PARTITION).permutation(data.n_samples)
    return [
        NodeShard(i, data.subset(idx), i, idx)
        for i, idx in enumerate(np.array_split(perm, n))
    ]


# -- IDX ---------------------------------------------------------------------


def _read_exact(f, size, what):
    buf = f.read(size)
    if len(buf) != size:
        raise IdxFormatError(f"truncated {what}: wanted {size} bytes, got {len(buf)}")
    return buf


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise IdxFormatError(f"{path}: bad image magic {magic:#010x}")
        raw = _read_exact(f, count * rows * cols, "image data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise IdxFormatError(f"{path}: bad label magic {magic:#010x}")
        raw = _read_exact(f, count, "label data")
    return np.frombuffer(raw, dtype=np.uint8)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images ``(count, rows, cols)`` and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path, keep_labels=None) -> Dataset:
    """Load an IDX image/label pair, pixels scaled to [0, 1].

    With ``keep_labels`` of exactly two labels the smaller maps to -1 and the
    larger to +1; otherwise labels are kept as class indices.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    features = images.astype(float) / 255.0
    if keep_labels is None:
        return Dataset(features, labels.astype(np.int64))
    keep = sorted(set(int(k) for k in keep_labels))
    if not keep:
        raise ValueError("keep_labels is empty; nothing to load")
    mask = np.isin(labels, keep)
    if not mask.any():
        raise ValueError(f"no samples with labels {keep}")
    kept = labels[mask].astype(np.int64)
    if len(keep) == 2:
        kept = np.where(kept == keep[1], 1.0, -1.0)
    return Dataset(features[mask], kept)


# -- columnar dump -----------------------------------------------------------


def save_dataset(path, data: Dataset) -> None:
    """16-byte header (magic, version, N, p), then p feature columns and the
    label column, each as N big-endian float64."""
    n, p = data.features.shape
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(DATASET_MAGIC + struct.pack(">III", DATASET_VERSION, n, p))
        f.write(np.asfortranarray(data.features).T.astype(">f8").tobytes())
        f.write(np.asarray(data.labels, dtype=">f8").tobytes())
    os.replace(tmp, path)


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        head = f.read(16)
        body = f.read()
    if len(head) != 16 or head[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset dump")
    version, n, p = struct.unpack(">III", head[4:])
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(body) != 8 * n * (p + 1):
        raise ValueError(f"{path}: expected {8 * n * (p + 1)} bytes of data, got {len(body)}")
    cols = np.frombuffer(body, dtype=">f8").reshape(p + 1, n).astype(float)
    labels = cols[p]
    if np.all(labels == np.round(labels)) and not np.isin(labels, (-1.0, 1.0)).all():
        labels = labels.astype(np.int64)
    return Dataset(np.ascontiguousarray(cols[:p].T), labels)


# -- problem assembly --------------------------------------------------------


@dataclass(eq=False)
class Problem:
    objective: object
    data: Dataset
    shards: list[NodeShard]
    x0: np.ndarray
    x_star: np.ndarray | None = None
    f_star: float | None = None
    _curvature: object = None

    @property
    def dim(self) -> int:
        return int(self.x0.size)

    @property
    def curvature(self):
        if self._curvature is None:
            self._curvature = self.objective.constants(self.data)
        return self._curvature


def _load_source(spec) -> Dataset:
    if spec.source == "idx":
        return load_idx(spec.images, spec.labels, spec.keep_labels)
    return load_dataset(spec.path)


def build_problem(spec, n: int) -> Problem:
    """Materialize a :class:`~fedpaq.config.ProblemSpec` sharded over ``n`` nodes."""
    from .objectives import MLP

    x_star = f_star = None
    if spec.kind == "logistic":
        obj = LogisticL2(spec.lam)
        if spec.source == "synthetic":
            data, x_star, f_star = gen_synthetic_logreg(spec.samples, spec.dim, spec.lam, spec.data_seed, spec.feature_scale)
        else:
            data = _load_source(spec)
            if not np.isin(data.labels, (-1.0, 1.0)).all():
                raise ValueError("logistic problems need labels in {-1, +1}; set problem.keep_labels to two digits")
            if spec.lam > 0:
                x_star = solve_logreg(obj, data)
                f_star = obj.loss(x_star, data)
        x0 = obj.init_params(data)
    else:
        if spec.source == "synthetic":
            data = gen_synthetic_multiclass(spec.samples, spec.dim, spec.classes, spec.data_seed, spec.teacher_hidden)
        else:
            data = _load_source(spec)
        classes = int(np.max(data.labels)) + 1 if spec.source != "synthetic" else spec.classes
        obj = MLP((data.dim, *spec.hidden, classes), spec.activation)
        x0 = obj.init_params(data, stream(spec.data_seed, Purpose.DATA, node=1))
    return Problem(obj, data, partition_iid(data, n, spec.data_seed), x0, x_star, f_star)


def build_setup(config, problem: Problem | None = None):
    """Resolve a RunConfig (and optionally a prebuilt problem) into a FedSetup."""
    from .cost_model import CostModelParams
    from .fed_core import Constant, FedSetup, NonConvexFlat, StronglyConvexDecay

    if problem is None:
        problem = build_problem(config.problem, config.nodes)
    if len(problem.shards) != config.nodes:
        raise ValueError(f"problem has {len(problem.shards)} shards, config wants {config.nodes} nodes")
    sched = config.schedule
    kind = sched.kind or ("strongly_convex" if problem.objective.strongly_convex else "nonconvex_flat")
    if kind == "constant":
        schedule = Constant(sched.eta * sched.coeff)
    elif kind == "strongly_convex":
        mu = sched.mu if sched.mu is not None else problem.curvature.mu
        schedule = StronglyConvexDecay(mu, config.period, sched.coeff)
    else:
        L = sched.smoothness if sched.smoothness is not None else problem.curvature.L
        schedule = NonConvexFlat(L, max(config.iterations, 1), sched.coeff)
    if config.bandwidth is not None:
        cost = CostModelParams(config.bandwidth, config.shift, config.scale, config.float_bits)
    else:
        cost = CostModelParams.from_ratio(problem.dim, config.ratio, config.shift, config.scale, config.float_bits)
    return FedSetup(
        objective=problem.objective,
        data=problem.data,
        shards=[s for s in problem.shards],
        x0=problem.x0,
        n=config.nodes,
        r=config.participants,
        tau=config.period,
        rounds=config.rounds,
        batch=config.batch,
        quantizer=config.quantizer,
        schedule=schedule,
        cost=cost,
        x_star=problem.x_star,
    )
