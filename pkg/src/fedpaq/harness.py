"""Experiment driver: runs configs and sweeps, writes plot-ready metrics."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import theory
from .config import ConfigError, RunConfig
from .data import Problem, build_problem
from .fed_core import RoundRecord, run
from .objectives import estimate_sigma2
from .rng import derive_seed

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "round", "iter", "sim_time_s", "comm_time_s", "comp_time_s",
    "train_loss", "grad_norm", "dist_sq_opt", "bits_uplink_cum",
)
OUT_ENV = "FEDPAQ_OUT"

_REPEAT_LABEL = 0x5245  # namespaces repeat seeds away from sweep-point seeds


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


# -- files -------------------------------------------------------------------


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def load_metrics(path) -> list[dict]:
    """Read a metrics CSV back into dicts of numbers."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for row in reader:
            rows.append({k: (int(v) if k in ("round", "iter", "bits_uplink_cum") else float(v)) for k, v in row.items()})
    return rows


# -- analysis ----------------------------------------------------------------


def _get(row, key):
    return row[key] if isinstance(row, dict) else getattr(row, key)


def time_to_target(metrics, target_loss: float) -> float | None:
    """First cumulative simulated time at which the training loss is <= target."""
    if not metrics:
        raise ValueError("metrics are empty")
    for row in metrics:
        if _get(row, "train_loss") <= target_loss:
            return float(_get(row, "sim_time_s"))
    return None


def theory_for(config: RunConfig, problem: Problem, sigma2_safety: float = 1.0) -> theory.TheoremConstants | None:
    """Theorem constants for ``config`` on ``problem``.

    The noise level is the largest per-shard variance of single-sample
    gradients at the initial point (and the optimum when known), divided by
    the batch size and scaled by ``sigma2_safety``. Returns None for n = 1.
    """
    if config.nodes < 2:
        return None
    points = [problem.x0] + ([problem.x_star] if problem.x_star is not None else [])
    sigma2 = estimate_sigma2(problem.objective, [s.data for s in problem.shards], points)
    sigma2 = sigma2 / config.batch * sigma2_safety
    curv = problem.curvature
    mu = curv.mu_value if curv.strongly_convex else None
    q = config.quantizer.variance_bound(problem.dim)
    consts = theory.evaluate(q, config.nodes, config.participants, curv.L, sigma2, config.period, config.iterations, mu)
    if consts.k0 is not None and consts.k0 * config.period > config.iterations:
        log.warning(
            "k0 * tau = %d exceeds the run's %d iterations; the strongly convex bound is never reached",
            consts.k0 * config.period, config.iterations,
        )
    return consts


# -- execution ---------------------------------------------------------------


@dataclass
class ExecuteResult:
    out_dir: Path
    metrics_path: Path
    summary_path: Path
    records: list[RoundRecord]
    summary: dict


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _band_csv(runs: list[list[RoundRecord]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ("sim_time_s", "train_loss")
    w.writerow(["round", "iter"] + [f"{c}_{stat}" for c in cols for stat in ("mean", "min", "max")])
    for rows in zip(*runs):
        out = [rows[0].round, rows[0].iter]
        for c in cols:
            vals = np.array([getattr(r, c) for r in rows])
            out += [repr(float(vals.mean())), repr(float(vals.min())), repr(float(vals.max()))]
        w.writerow(out)
    return buf.getvalue()


def execute(config: RunConfig, out_dir, problem: Problem | None = None, with_theory: bool = True) -> ExecuteResult:
    """Run ``config`` and write ``metrics.csv`` and ``summary.json`` to ``out_dir``.

    With ``repeats > 1`` repeat ``i >= 1`` uses a seed derived from the master
    seed and is written to ``metrics_rep{i}.csv``; ``band.csv`` holds the
    per-round mean and min/max over all repeats.
    """
    out_dir = Path(out_dir)
    if problem is None:
        problem = build_problem(config.problem, config.nodes)
    started = time.perf_counter()
    records = run(config, problem)
    runs = [records]
    for i in range(1, config.repeats):
        runs.append(run(config.with_(seed=derive_seed(config.seed, _REPEAT_LABEL, i)), problem))
    wall = time.perf_counter() - started

    metrics_path = out_dir / "metrics.csv"
    atomic_write(metrics_path, metrics_csv(records))
    for i, recs in enumerate(runs[1:], start=1):
        atomic_write(out_dir / f"metrics_rep{i}.csv", metrics_csv(recs))
    if len(runs) > 1:
        atomic_write(out_dir / "band.csv", _band_csv(runs))

    consts = theory_for(config, problem) if with_theory else None
    final = {c: getattr(records[-1], c) for c in CSV_COLUMNS} if records else None
    summary = {
        "config": config.to_dict(),
        "theory": consts.to_dict() if consts is not None else None,
        "f_star": problem.f_star,
        "final": final,
        "simulation_wall_clock_s": wall,
    }
    summary_path = out_dir / "summary.json"
    atomic_write(summary_path, json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    return ExecuteResult(out_dir, metrics_path, summary_path, records, summary)


def tune_coeff(config: RunConfig, coeffs, problem: Problem | None = None) -> tuple[float, dict]:
    """Grid search over the stepsize multiplier; picks the lowest final training loss.

    Ties go to the earlier candidate. Returns ``(best, {coeff: final_loss})``.
    """
    coeffs = list(coeffs)
    if not coeffs:
        raise ConfigError("coefficient grid is empty")
    if problem is None:
        problem = build_problem(config.problem, config.nodes)
    finals = {}
    for c in coeffs:
        sched = replace(config.schedule, coeff=float(c))
        records = run(config.with_(schedule=sched), problem)
        finals[c] = records[-1].train_loss if records else math.inf
    best = min(coeffs, key=lambda c: (not math.isfinite(finals[c]), finals[c]))
    return best, finals


# -- sweeps ------------------------------------------------------------------


def point_seed(base_seed: int, levels: int, participants: int, period: int) -> int:
    return derive_seed(base_seed, levels, participants, period)


def baseline_configs(config: RunConfig) -> list[tuple[str, RunConfig]]:
    """FedPAQ vs FedAvg (identity uploads) vs QSGD (tau = 1), all with r = n
    and the base config's total iteration count."""
    T, n = config.iterations, config.nodes
    levels = config.levels or 1
    return [
        ("fedpaq", config.with_(participants=n, levels=levels)),
        ("fedavg", config.with_(participants=n, levels=0)),
        ("qsgd", config.with_(participants=n, levels=levels, period=1, iterations=T)),
    ]


def sweep_points(config: RunConfig) -> list[tuple[str, RunConfig]]:
    """Configs for each sweep point, each carrying its own derived seed.

    Varying the period keeps the total iteration count fixed.
    """
    sw = config.sweep
    if sw.empty:
        raise ConfigError("sweep needs at least one nonempty list under [sweep]")
    if sw.baselines:
        base = baseline_configs(config)
    else:
        base = []
        T = config.iterations
        for lv, r, tau in itertools.product(
            sw.levels or (config.levels,),
            sw.participants or (config.participants,),
            sw.period or (config.period,),
        ):
            if T % tau:
                raise ConfigError(f"period {tau} does not divide the {T} total iterations")
            name = f"s{lv if lv else 'id'}_r{r}_tau{tau}"
            base.append((name, config.with_(levels=lv, participants=r, period=tau, iterations=T)))
    return [
        (name, c.with_(seed=point_seed(config.seed, c.levels, c.participants, c.period)))
        for name, c in base
    ]


def sweep(config: RunConfig, out_dir, problem: Problem | None = None, with_theory: bool = False) -> Path:
    """Execute every sweep point into ``out_dir/<point>/`` and write an index."""
    out_dir = Path(out_dir)
    points = sweep_points(config)
    if problem is None:
        problem = build_problem(config.problem, config.nodes)
    rows = []
    for name, c in points:
        res = execute(c, out_dir / name, problem, with_theory=with_theory)
        last = res.records[-1] if res.records else None
        rows.append({
            "point": name,
            "levels": c.levels,
            "participants": c.participants,
            "period": c.period,
            "rounds": c.rounds,
            "seed": c.seed,
            "final_loss": last.train_loss if last else math.nan,
            "final_sim_time_s": last.sim_time_s if last else 0.0,
            "metrics": f"{name}/metrics.csv",
        })
        log.info("sweep point %s done: final loss %.6g", name, rows[-1]["final_loss"])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})
    index = out_dir / "index.csv"
    atomic_write(index, buf.getvalue())
    atomic_write(out_dir / "index.json", json.dumps(_json_safe(rows), indent=2) + "\n")
    return index

