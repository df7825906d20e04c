"""Run configuration: a flat INI file with one level of sections.

Example::

    [problem]
    kind = logistic
    samples = 2000
    dim = 20
    lam = 0.1

    [federation]
    nodes = 20
    participants = 10
    period = 5
    iterations = 400

    [quantizer]
    levels = 4

    [cost]
    ratio = 100
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace

from .quantizer import Identity, LowPrecision

DEFAULT_BATCH = 10
DEFAULT_FLOAT_BITS = 32
DEFAULT_RATIO = 100.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemSpec:
    kind: str = "logistic"  # logistic | mlp
    source: str = "synthetic"  # synthetic | idx | file
    samples: int = 2000
    dim: int = 20
    lam: float = 0.1
    feature_scale: float = 1.0
    classes: int = 3
    hidden: tuple[int, ...] = (32,)
    activation: str = "tanh"
    teacher_hidden: int = 16
    images: str | None = None
    labels: str | None = None
    keep_labels: tuple[int, ...] | None = None
    path: str | None = None
    data_seed: int = 0


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str | None = None  # constant | strongly_convex | nonconvex_flat; None picks by problem
    eta: float | None = None
    coeff: float = 1.0
    mu: float | None = None
    smoothness: float | None = None


@dataclass(frozen=True)
class SweepSpec:
    levels: tuple = ()  # ints; 0 means identity
    participants: tuple[int, ...] = ()
    period: tuple[int, ...] = ()
    baselines: bool = False

    @property
    def empty(self) -> bool:
        return not (self.levels or self.participants or self.period or self.baselines)


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    nodes: int
    participants: int
    period: int
    rounds: int
    batch: int = DEFAULT_BATCH
    quantizer: LowPrecision | Identity = field(default_factory=lambda: LowPrecision(1))
    float_bits: int = DEFAULT_FLOAT_BITS
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    bandwidth: float | None = None
    ratio: float | None = None
    shift: float = 0.001
    scale: float = 1000.0
    seed: int = 0
    workers: int = 1
    shadow: bool = False
    repeats: int = 1
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def __post_init__(self):
        validate(self)

    @property
    def iterations(self) -> int:
        return self.rounds * self.period

    @property
    def levels(self) -> int:
        """Quantization levels, 0 for identity uploads."""
        return 0 if isinstance(self.quantizer, Identity) else self.quantizer.s

    def with_(self, **changes) -> RunConfig:
        """Copy with changes; ``levels=`` and ``iterations=`` are accepted too."""
        if "levels" in changes:
            s = changes.pop("levels")
            changes["quantizer"] = Identity() if s in (0, None, "identity") else LowPrecision(int(s))
        if "iterations" in changes:
            t = changes.pop("iterations")
            period = changes.get("period", self.period)
            if t % period:
                raise ConfigError(f"iterations={t} is not a multiple of period={period}")
            changes["rounds"] = t // period
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantizer"] = {"mode": "identity"} if self.levels == 0 else {"mode": "low_precision", "levels": self.levels}
        d["iterations"] = self.iterations
        return d


def validate(c: RunConfig) -> None:
    p = c.problem
    if p.kind not in ("logistic", "mlp"):
        raise ConfigError(f"problem.kind must be 'logistic' or 'mlp', got {p.kind!r}")
    if p.source not in ("synthetic", "idx", "file"):
        raise ConfigError(f"problem.source must be synthetic, idx or file, got {p.source!r}")
    if p.source == "idx" and not (p.images and p.labels):
        raise ConfigError("problem.source = idx needs problem.images and problem.labels")
    if p.source == "file" and not p.path:
        raise ConfigError("problem.source = file needs problem.path")
    if p.kind == "logistic" and p.lam < 0:
        raise ConfigError(f"problem.lam must be >= 0, got {p.lam}")
    if c.nodes < 1:
        raise ConfigError(f"federation.nodes must be >= 1, got {c.nodes}")
    if not 1 <= c.participants <= c.nodes:
        raise ConfigError(
            f"federation.participants ({c.participants}) must be between 1 and federation.nodes ({c.nodes})"
        )
    if c.period < 1:
        raise ConfigError(f"federation.period must be >= 1, got {c.period}")
    if c.rounds < 0:
        raise ConfigError(f"federation.rounds must be >= 0, got {c.rounds}")
    if c.batch < 1:
        raise ConfigError(f"federation.batch must be >= 1, got {c.batch}")
    if c.float_bits not in (16, 32, 64):
        raise ConfigError(f"quantizer.float_bits must be 16, 32 or 64, got {c.float_bits}")
    if c.bandwidth is not None and c.ratio is not None:
        raise ConfigError("set exactly one of cost.bandwidth and cost.ratio, not both")
    if c.bandwidth is None and c.ratio is None:
        raise ConfigError("set one of cost.bandwidth or cost.ratio")
    for name in ("bandwidth", "ratio", "scale"):
        v = getattr(c, name)
        if v is not None and not v > 0:
            raise ConfigError(f"cost.{name} must be > 0, got {v}")
    if c.shift < 0:
        raise ConfigError(f"cost.shift must be >= 0, got {c.shift}")
    s = c.schedule
    if s.kind not in (None, "constant", "strongly_convex", "nonconvex_flat"):
        raise ConfigError(f"schedule.kind must be constant, strongly_convex or nonconvex_flat, got {s.kind!r}")
    if s.kind == "constant" and not (s.eta and s.eta > 0):
        raise ConfigError("schedule.kind = constant needs schedule.eta > 0")
    if not s.coeff > 0:
        raise ConfigError(f"schedule.coeff must be > 0, got {s.coeff}")
    if c.workers < 1 or c.repeats < 1:
        raise ConfigError("run.workers and run.repeats must be >= 1")
    for r in c.sweep.participants:
        if not 1 <= r <= c.nodes:
            raise ConfigError(f"sweep.participants value {r} must be between 1 and federation.nodes ({c.nodes})")
    for t in c.sweep.period:
        if t < 1:
            raise ConfigError(f"sweep.period values must be >= 1, got {t}")
    for lv in c.sweep.levels:
        if lv < 0:
            raise ConfigError(f"sweep.levels values must be >= 0 (0 = identity), got {lv}")


# -- parsing -----------------------------------------------------------------

_KEYS = {
    "problem": {
        "kind": str, "source": str, "samples": int, "dim": int, "lam": float,
        "feature_scale": float, "classes": int, "hidden": "ints", "activation": str,
        "teacher_hidden": int, "images": str, "labels": str, "keep_labels": "ints",
        "path": str, "data_seed": int,
    },
    "federation": {
        "nodes": int, "participants": int, "period": int, "rounds": int,
        "iterations": int, "batch": int,
    },
    "quantizer": {"mode": str, "levels": int, "float_bits": int},
    "schedule": {"kind": str, "eta": float, "coeff": float, "mu": float, "smoothness": float},
    "cost": {"bandwidth": float, "ratio": float, "shift": float, "scale": float},
    "run": {"seed": int, "workers": int, "shadow": bool, "repeats": int},
    "sweep": {"levels": "levels", "participants": "ints", "period": "ints", "baselines": bool},
}

_REQUIRED = [("problem", "kind"), ("federation", "nodes"), ("federation", "period")]


def _convert(section, key, raw, kind):
    where = f"{section}.{key}"
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in ("ints", "levels"):
            items = [t.strip() for t in raw.split(",") if t.strip()]
            if kind == "levels":
                return tuple(0 if t.lower() == "identity" else int(t) for t in items)
            return tuple(int(t) for t in items)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def parse_text(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="\0none")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(f"{source}: unknown section [{section}]; expected one of {sorted(_KEYS)}")
        for key, raw in cp.items(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            values.setdefault(section, {})[key] = _convert(section, key, raw, _KEYS[section][key])
    for section, key in _REQUIRED:
        if key not in values.get(section, {}):
            raise ConfigError(f"{source}: missing required key {section}.{key}")
    if "sweep" in values:
        for key, v in values["sweep"].items():
            if isinstance(v, tuple) and not v:
                raise ConfigError(f"{source}: sweep.{key} is an empty list")
    return from_dict(values)


def parse_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_text(f.read(), source=str(path))


def from_dict(values: dict) -> RunConfig:
    prob = dict(values.get("problem", {}))
    fed = dict(values.get("federation", {}))
    quant = dict(values.get("quantizer", {}))
    sched = dict(values.get("schedule", {}))
    cost = dict(values.get("cost", {}))
    run = dict(values.get("run", {}))
    sweep = dict(values.get("sweep", {}))

    if "hidden" in prob:
        prob["hidden"] = tuple(prob["hidden"])
    problem = ProblemSpec(**prob)

    nodes = fed.pop("nodes")
    period = fed.pop("period")
    participants = fed.pop("participants", nodes)
    rounds, iterations = fed.pop("rounds", None), fed.pop("iterations", None)
    if rounds is None and iterations is None:
        raise ConfigError("set federation.rounds or federation.iterations")
    if iterations is not None:
        if period < 1 or iterations % period:
            raise ConfigError(f"federation.iterations ({iterations}) must be a multiple of federation.period ({period})")
        if rounds is not None and rounds * period != iterations:
            raise ConfigError(
                f"federation.rounds ({rounds}) x federation.period ({period}) != federation.iterations ({iterations})"
            )
        rounds = iterations // period

    mode = quant.pop("mode", "low_precision")
    levels = quant.pop("levels", 1)
    if mode == "identity":
        quantizer = Identity()
    elif mode == "low_precision":
        if levels < 1:
            raise ConfigError(f"quantizer.levels must be >= 1, got {levels}")
        quantizer = LowPrecision(levels)
    else:
        raise ConfigError(f"quantizer.mode must be low_precision or identity, got {mode!r}")

    if "bandwidth" not in cost and "ratio" not in cost:
        cost["ratio"] = DEFAULT_RATIO

    return RunConfig(
        problem=problem,
        nodes=nodes,
        participants=participants,
        period=period,
        rounds=rounds,
        batch=fed.pop("batch", DEFAULT_BATCH),
        quantizer=quantizer,
        float_bits=quant.pop("float_bits", DEFAULT_FLOAT_BITS),
        schedule=ScheduleSpec(**sched),
        bandwidth=cost.get("bandwidth"),
        ratio=cost.get("ratio"),
        shift=cost.get("shift", 0.001),
        scale=cost.get("scale", 1000.0),
        seed=run.get("seed", 0),
        workers=run.get("workers", 1),
        shadow=run.get("shadow", False),
        repeats=run.get("repeats", 1),
        sweep=SweepSpec(**sweep),
    )
