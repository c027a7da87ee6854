"""Run configuration: nested sections, strict parsing, JSON round-trip.

A config file is a JSON object with the sections ``topology``, ``data``,
``loss``, ``schedule``, ``aggregator``, ``attack`` and ``run``. Every section
and key is optional; unknown keys are rejected.
"""
import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigInvalid

METRICS = ("consensus", "train_loss", "opt_error", "test_loss", "gap", "accuracy")


@dataclass
class TopologyConfig:
    kind: str = "erdos_renyi"  # erdos_renyi | complete | path | ring
    n_agents: int = 10
    p: float = 0.7
    n_byzantine: int = 0
    seed: int | None = None

    def validate(self):
        _choice(self.kind, ("erdos_renyi", "complete", "path", "ring"), "topology.kind")
        if self.n_agents < 1:
            raise ConfigInvalid("must be >= 1", "topology.n_agents")
        if self.kind == "erdos_renyi" and not 0 < self.p <= 1:
            raise ConfigInvalid("must lie in (0, 1]", "topology.p")
        if not 0 <= self.n_byzantine < self.n_agents:
            raise ConfigInvalid("must be in [0, n_agents)", "topology.n_byzantine")


@dataclass
class DataConfig:
    source: str = "synthetic"  # synthetic | idx
    n_classes: int = 10
    dim: int = 10
    sep: float = 3.0
    offset: float = 0.0
    noise: float = 1.0
    pool_size: int | None = None  # default: pool_factor * n_agents * z_per_agent
    pool_factor: float = 1.0
    test_size: int = 10_000
    beta: float = 1.0
    z_per_agent: int = 500
    seed: int | None = None
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def validate(self):
        _choice(self.source, ("synthetic", "idx"), "data.source")
        if self.beta <= 0:
            raise ConfigInvalid("must be positive", "data.beta")
        if self.pool_factor < 1:
            raise ConfigInvalid("must be >= 1", "data.pool_factor")
        if self.z_per_agent < 1:
            raise ConfigInvalid("must be >= 1", "data.z_per_agent")
        if self.source == "synthetic" and self.n_classes < 2:
            raise ConfigInvalid("must be >= 2", "data.n_classes")


@dataclass
class LossConfig:
    reg: float = 0.01

    def validate(self):
        if self.reg <= 0:
            raise ConfigInvalid("must be positive", "loss.reg")


@dataclass
class ScheduleConfig:
    kind: str = "experiment"  # experiment | theory_k0 | theory_k1
    a: float = 1.0
    b: float = 0.01
    offset: float | None = None  # k0 / k1; None = smallest value with alpha0 <= 1/(2L)

    def validate(self):
        _choice(self.kind, ("experiment", "theory_k0", "theory_k1"), "schedule.kind")
        if self.kind == "experiment" and (self.a <= 0 or self.b < 0):
            raise ConfigInvalid("need a > 0 and b >= 0", "schedule")
        if self.offset is not None and self.offset <= 0:
            raise ConfigInvalid("must be positive", "schedule.offset")


@dataclass
class AggregatorConfig:
    kind: str = "mean"
    trim_b: int | None = None  # None = number of Byzantine agents
    clip_tau: float | str = "adaptive"

    def validate(self):
        _choice(self.kind, ("mean", "tm", "ios", "scc"), "aggregator.kind")
        if self.trim_b is not None and self.trim_b < 0:
            raise ConfigInvalid("must be >= 0", "aggregator.trim_b")
        if self.clip_tau != "adaptive":
            try:
                if float(self.clip_tau) < 0:
                    raise ValueError
            except (TypeError, ValueError):
                raise ConfigInvalid("must be 'adaptive' or a nonnegative number", "aggregator.clip_tau")


@dataclass
class AttackConfig:
    kind: str = "none"
    alie_scale: float = 0.3
    dup_target: int | None = None

    def validate(self):
        _choice(self.kind, ("none", "gaussian", "sample_dup", "alie", "sign_flip"), "attack.kind")


@dataclass
class RunSection:
    steps: int = 2000
    eval_every: int = 50
    master_seed: int = 0
    init_value: float = 0.0
    metrics: list = field(default_factory=lambda: list(METRICS[:5]))
    threads: int = 1
    solver_tol: float = 1e-9
    probe_points: int = 16

    def validate(self):
        if self.steps < 0:
            raise ConfigInvalid("must be >= 0", "run.steps")
        if self.eval_every < 1:
            raise ConfigInvalid("must be >= 1", "run.eval_every")
        if self.threads < 1:
            raise ConfigInvalid("must be >= 1", "run.threads")
        for m in self.metrics:
            _choice(m, METRICS, "run.metrics")


SECTIONS = {
    "topology": TopologyConfig,
    "data": DataConfig,
    "loss": LossConfig,
    "schedule": ScheduleConfig,
    "aggregator": AggregatorConfig,
    "attack": AttackConfig,
    "run": RunSection,
}


@dataclass
class RunConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    data: DataConfig = field(default_factory=DataConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    run: RunSection = field(default_factory=RunSection)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.attack.kind != "none" and self.topology.n_byzantine == 0:
            raise ConfigInvalid("an attack needs n_byzantine >= 1", "attack.kind")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**_parse_sections(d)).validate()

    def replace(self, **dotted):
        """Copy with dotted-key overrides, e.g. ``replace(**{"data.beta": 0.1})``."""
        d = self.to_dict()
        for key, value in dotted.items():
            sec, _, name = key.partition(".")
            if sec not in d or name not in d[sec]:
                raise ConfigInvalid("unknown key", key)
            d[sec][name] = copy.deepcopy(value)
        return RunConfig.from_dict(d)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _choice(value, options, where):
    if value not in options:
        raise ConfigInvalid(f"{value!r} is not one of {list(options)}", where)


def _parse_section(cls, name, raw):
    if not isinstance(raw, dict):
        raise ConfigInvalid("section must be an object", name)
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigInvalid("unknown key", f"{name}.{key}")
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        expected = getattr(defaults, key)
        if isinstance(expected, bool) or isinstance(value, bool):
            pass
        elif isinstance(expected, int) and not isinstance(expected, bool) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigInvalid(f"expected an integer, got {value!r}", f"{name}.{key}")
            value = int(value)
        elif isinstance(expected, float) and isinstance(value, int):
            value = float(value)
        if isinstance(expected, list) and not isinstance(value, list):
            raise ConfigInvalid("expected a list", f"{name}.{key}")
        if isinstance(expected, (int, float)) and not isinstance(value, (int, float, str)) and value is not None:
            raise ConfigInvalid(f"expected a number, got {type(value).__name__}", f"{name}.{key}")
        kwargs[key] = value
    return cls(**kwargs)


def _parse_sections(d):
    if not isinstance(d, dict):
        raise ConfigInvalid("config must be a JSON object")
    for key in d:
        if key not in SECTIONS:
            raise ConfigInvalid("unknown section", key)
    return {name: _parse_section(cls, name, d.get(name, {})) for name, cls in SECTIONS.items()}


def parse_json_text(text, source="<config>"):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"line {e.lineno} column {e.colno}: {e.msg}", source) from e
    return raw


def load_config(path):
    with open(path) as fh:
        raw = parse_json_text(fh.read(), str(path))
    return RunConfig.from_dict(raw)


SWEEP_AXES = {
    "beta": "data.beta",
    "z_per_agent": "data.z_per_agent",
    "attack": "attack.kind",
    "aggregator": "aggregator.kind",
}


@dataclass
class ExperimentPlan:
    base: RunConfig
    sweep: dict = field(default_factory=dict)  # axis -> list of values; "seed" -> master seeds
    out: str = "sweep_out"
    max_cells: int = 1000
    stability_pairs: int = 0

    def cells(self):
        """Cartesian product of the non-seed axes, as lists of dotted overrides."""
        axes = [(SWEEP_AXES[a], vals) for a, vals in self.sweep.items() if a != "seed" and vals]
        combos = [{}]
        for key, vals in axes:
            combos = [{**c, key: v} for c in combos for v in vals]
        return combos

    def seeds(self):
        return list(self.sweep.get("seed") or [self.base.run.master_seed])

    def validate(self):
        for axis, vals in self.sweep.items():
            if axis != "seed" and axis not in SWEEP_AXES:
                raise ConfigInvalid("unknown sweep axis", f"sweep.{axis}")
            if not isinstance(vals, list):
                raise ConfigInvalid("expected a list", f"sweep.{axis}")
        n = len(self.cells()) * len(self.seeds())
        if n > self.max_cells:
            raise ConfigInvalid(f"{n} runs exceed the cap of {self.max_cells}", "max_cells")
        for c in self.cells():
            self.base.replace(**c)
        return self

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigInvalid("plan must be a JSON object")
        allowed = {"base", "sweep", "out", "max_cells", "stability_pairs"}
        for key in d:
            if key not in allowed:
                raise ConfigInvalid("unknown key", key)
        plan = cls(
            base=RunConfig.from_dict(d.get("base", {})),
            sweep=dict(d.get("sweep", {})),
            out=d.get("out", "sweep_out"),
            max_cells=int(d.get("max_cells", 1000)),
            stability_pairs=int(d.get("stability_pairs", 0)),
        )
        return plan.validate()

    def to_dict(self):
        return {
            "base": self.base.to_dict(),
            "sweep": self.sweep,
            "out": self.out,
            "max_cells": self.max_cells,
            "stability_pairs": self.stability_pairs,
        }


def load_plan(path):
    with open(path) as fh:
        return ExperimentPlan.from_dict(parse_json_text(fh.read(), str(path)))
