"""Periodic averaging with partial participation and quantized uploads.

One round: the server samples ``r`` of ``n`` nodes, each runs ``tau`` local
SGD steps from the broadcast model, uploads its (possibly quantized) model
change, and the server adds the mean of the dequantized changes.

Degenerate settings recover the baselines: identity uploads with full
participation is FedAvg-style local SGD, ``tau = 1`` with quantization and
full participation is QSGD-style, and ``tau = 1`` with identity uploads and
full participation is minibatch parallel SGD.
"""

from __future__ import annotations

import hashlib
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cost_model
from .objectives import sample_indices
from .quantizer import QuantizedVector, dequantize
from .rng import SERVER, Purpose, rekey, stream


# -- stepsizes ---------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")


@dataclass(frozen=True)
class StronglyConvexDecay:
    """``coeff * 4 / (mu * (k * tau + 1))``, constant within a round."""

    mu: float
    tau: int
    coeff: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and self.tau >= 1 and self.coeff > 0):
            raise ValueError(f"need mu > 0, tau >= 1, coeff > 0; got {self}")


@dataclass(frozen=True)
class NonConvexFlat:
    """``coeff / (L * sqrt(T))`` at every iteration."""

    L: float
    T: int
    coeff: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.T >= 1 and self.coeff > 0):
            raise ValueError(f"need L > 0, T >= 1, coeff > 0; got {self}")


StepsizeSchedule = Constant | StronglyConvexDecay | NonConvexFlat


def stepsize(schedule: StepsizeSchedule, k: int, t: int = 0) -> float:
    if k < 0 or t < 0:
        raise ValueError(f"round and iteration must be >= 0, got k={k}, t={t}")
    if isinstance(schedule, Constant):
        return schedule.eta
    if isinstance(schedule, StronglyConvexDecay):
        return schedule.coeff * 4.0 / (schedule.mu * (k * schedule.tau + 1))
    if isinstance(schedule, NonConvexFlat):
        return schedule.coeff / (schedule.L * math.sqrt(schedule.T))
    raise TypeError(f"unknown schedule {schedule!r}")


# -- the round ---------------------------------------------------------------


def sample_participants(n: int, r: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random ``r``-subset of ``range(n)``, sorted ascending."""
    if not 1 <= r <= n:
        raise ValueError(f"need 1 <= r <= n, got r={r}, n={n}")
    if r == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=r, replace=False))


def local_period(x_k, node, obj, tau: int, batch: int, schedule, k: int, rng, trace: list | None = None) -> np.ndarray:
    """Run ``tau`` local SGD steps from ``x_k`` on ``node``'s shard and return
    the model change ``x_{k,tau} - x_k``.

    The change is accumulated directly, so with ``tau = 1`` it is exactly
    ``-eta * g``. When ``trace`` is a list, the local models
    ``x_{k,0} .. x_{k,tau-1}`` are appended to it.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    x_k = np.asarray(x_k, dtype=float)
    data = node.data
    # one draw for all tau minibatches consumes the stream exactly like tau
    # separate with-replacement draws
    idx = sample_indices(data.n_samples, batch, rng, size=(tau, batch))
    # objectives with rows_grad get the rows gathered once per period
    gathered = hasattr(obj, "rows_grad")
    if gathered:
        rows, labels = data.features[idx], data.labels[idx]
    delta = np.zeros_like(x_k)
    for t in range(tau):
        x_t = x_k + delta
        if trace is not None:
            trace.append(x_t)
        g = obj.rows_grad(x_t, rows[t], labels[t]) if gathered else obj.batch_grad(x_t, data, idx[t])
        delta = delta - stepsize(schedule, k, t) * g
    return delta


def server_round(x_k, deltas, r: int) -> np.ndarray:
    """``x_k + (1/r) * sum(dequantize(d))``; ``deltas`` summed in the given order."""
    if len(deltas) != r:
        raise ValueError(f"expected {r} updates, got {len(deltas)}")
    x_k = np.asarray(x_k, dtype=float)
    acc = np.zeros_like(x_k)
    for d in deltas:
        acc += dequantize(d) if isinstance(d, QuantizedVector) else np.asarray(d, dtype=float)
    return x_k + acc / r


# -- full runs ---------------------------------------------------------------


@dataclass
class RoundRecord:
    round: int
    iter: int
    sim_time_s: float
    comm_time_s: float
    comp_time_s: float
    train_loss: float
    grad_norm: float
    dist_sq_opt: float
    bits_uplink_cum: int
    participants_hash: str
    shadow_grad_sq: tuple = field(default=())


@dataclass(frozen=True)
class FedSetup:
    """Everything a run needs besides the RNG seed."""

    objective: object
    data: object  # the global Dataset
    shards: list
    x0: np.ndarray
    n: int
    r: int
    tau: int
    rounds: int
    batch: int
    quantizer: object
    schedule: object
    cost: cost_model.CostModelParams
    x_star: np.ndarray | None = None


def _participants_hash(ids) -> str:
    return hashlib.sha256(np.asarray(ids, dtype=">u4").tobytes()).hexdigest()[:16]


_local = threading.local()


def _thread_streams():
    # one reusable generator per purpose and thread, rekeyed for every cell
    if not hasattr(_local, "sgd"):
        _local.sgd = stream(0, Purpose.LOCAL_SGD)
        _local.comp = stream(0, Purpose.COMP_TIME)
    return _local


def _node_work(setup: FedSetup, seed: int, x_k, k: int, node_id: int, upload: bool, shadow: bool):
    # one algorithmic stream per (node, round): tau minibatch draws, then the
    # quantizer's draws; compute-time noise has its own stream
    rng = rekey(_thread_streams().sgd, seed, Purpose.LOCAL_SGD, node_id, k)
    trace = [] if shadow else None
    delta = local_period(
        x_k, setup.shards[node_id], setup.objective, setup.tau, setup.batch, setup.schedule, k, rng, trace
    )
    if not upload:
        return None, 0, 0.0, trace
    p = delta.size
    msg = setup.quantizer.apply(delta, rng, setup.cost.float_bits)
    bits = setup.quantizer.bits(p, setup.cost.float_bits)
    comp = cost_model.node_comp_time(
        setup.tau, setup.batch, setup.cost, rekey(_thread_streams().comp, seed, Purpose.COMP_TIME, node_id, k)
    )
    return msg, bits, comp, trace


def run_setup(setup: FedSetup, seed: int, workers: int = 1, shadow: bool = False, on_round=None) -> list[RoundRecord]:
    """Execute ``setup.rounds`` rounds and return one record per round.

    Results are bit-identical for any ``workers``: every node draws from its
    own (seed, node, round) streams and updates are reduced in node-id order.
    ``on_round(k, x_{k+1})`` is called after each server update.
    """
    x = np.array(setup.x0, dtype=float)
    records: list[RoundRecord] = []
    comm_cum = comp_cum = 0.0
    bits_cum = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(setup.rounds):
            chosen = sample_participants(setup.n, setup.r, stream(seed, Purpose.SAMPLING, SERVER, k))
            members = set(chosen.tolist())
            ids = range(setup.n) if shadow else chosen.tolist()
            tasks = [(setup, seed, x, k, i, i in members, shadow) for i in ids]
            results = list(pool.map(lambda a: _node_work(*a), tasks)) if pool else [_node_work(*a) for a in tasks]
            by_id = dict(zip(ids, results))
            uploads = [by_id[i] for i in chosen.tolist()]

            shadow_sq = ()
            if shadow:
                traces = np.array([by_id[i][3] for i in range(setup.n)])  # (n, tau, p)
                xbar = traces.mean(axis=0)
                shadow_sq = tuple(
                    float(np.square(setup.objective.grad(xb, setup.data)).sum()) for xb in xbar
                )

            x = server_round(x, [u[0] for u in uploads], setup.r)
            round_bits = [u[1] for u in uploads]
            comm_cum += cost_model.round_comm_time(round_bits, setup.cost)
            comp_cum += cost_model.round_comp_time([u[2] for u in uploads])
            bits_cum += sum(round_bits)
            records.append(_record(setup, k, x, comm_cum, comp_cum, bits_cum, chosen, shadow_sq))
            if on_round is not None:
                on_round(k, x)
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def _record(setup, k, x, comm, comp, bits, chosen, shadow_sq) -> RoundRecord:
    g = setup.objective.grad(x, setup.data)
    dist = float(np.square(x - setup.x_star).sum()) if setup.x_star is not None else math.nan
    return RoundRecord(
        round=k + 1,
        iter=(k + 1) * setup.tau,
        sim_time_s=comm + comp,
        comm_time_s=comm,
        comp_time_s=comp,
        train_loss=setup.objective.loss(x, setup.data),
        grad_norm=float(np.linalg.norm(g)),
        dist_sq_opt=dist,
        bits_uplink_cum=bits,
        participants_hash=_participants_hash(chosen),
        shadow_grad_sq=shadow_sq,
    )


def run(config, problem=None, on_round=None) -> list[RoundRecord]:
    """Run a :class:`~fedpaq.config.RunConfig` end to end."""
    from .data import build_setup

    setup = build_setup(config, problem)
    return run_setup(setup, config.seed, workers=config.workers, shadow=config.shadow, on_round=on_round)

