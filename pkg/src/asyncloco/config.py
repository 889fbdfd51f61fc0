"""Experiment configuration in a flat ``section.key=value`` text format.

Blank lines and ``#`` comments are ignored.  Every key has a default, so an
empty file is a valid config.  Unknown keys, unparsable values and violated
constraints raise :class:`ConfigError` naming the key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

from .model import ConfigError, MlpConfig

SPEED_PRESETS = {
    "no": (1.0, 1.0, 1.0, 1.0),
    "slight": (1.0, 0.9, 0.8, 0.7),
    "moderate": (1.0, 0.75, 0.5, 0.25),
    "very": (1.0, 0.5, 0.25, 0.125),
}

STRATEGIES = ("vanilla", "poly", "polythres", "delay_comp", "async_buffer", "delayed_nesterov")
OUTER_OPTIMIZERS = ("sgd", "momentum", "nesterov", "adam")


@dataclass(frozen=True)
class DataSection:
    num_classes: int = 4
    components_per_class: int = 4
    dim: int = 2
    num_points: int = 8192
    covariance_scale: float = 0.05
    spread: float = 1.5
    shard_mode: str = "by_component"
    affinity: float = 0.75
    eval_points: int = 2048
    batch_size: int = 32


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: tuple[int, ...] = (32,)
    activation: str = "relu"


@dataclass(frozen=True)
class SchedSection:
    mode: str = "async"
    workers: int = 4
    profile: str = "very"
    speeds: tuple[float, ...] = ()
    H: int = 50
    dylu: bool = False
    grace_period: float | None = None
    t_max: int = 20000
    max_sim_time: float = math.inf


@dataclass(frozen=True)
class InnerSection:
    optimizer: str = "adamw"
    lr: float = 0.001
    lr_min: float = 1e-4
    warmup: int = 100
    total_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1


@dataclass(frozen=True)
class OuterSection:
    strategy: str = "vanilla"
    optimizer: str = "nesterov"
    lr: float = 0.5
    beta: float = 0.9
    N: int | None = None
    c: float = 0.0
    lam: float = 0.5
    poly_exponent: float = 0.5
    threshold: float = 10


@dataclass(frozen=True)
class EvalSection:
    every: int = 10


@dataclass(frozen=True)
class SeedSection:
    data: int = 0
    init: int = 0
    run: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    sched: SchedSection = field(default_factory=SchedSection)
    inner: InnerSection = field(default_factory=InnerSection)
    outer: OuterSection = field(default_factory=OuterSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: SeedSection = field(default_factory=SeedSection)

    # -- derived values -------------------------------------------------

    @property
    def speeds(self) -> tuple[float, ...]:
        if self.sched.speeds:
            return self.sched.speeds
        preset = SPEED_PRESETS[self.sched.profile]
        return tuple(preset[i % len(preset)] for i in range(self.sched.workers))

    @property
    def grace_period(self) -> float:
        if self.sched.grace_period is not None:
            return self.sched.grace_period
        return 0.5 / min(self.speeds)

    @property
    def buffer_size(self) -> int:
        return self.outer.N if self.outer.N is not None else self.sched.workers

    @property
    def shard_total_steps(self) -> int:
        if self.inner.total_steps is not None:
            return self.inner.total_steps
        return max(1, self.sched.t_max // self.sched.workers)

    @property
    def mlp(self) -> MlpConfig:
        return MlpConfig(self.data.dim, self.model.hidden_dims, self.data.num_classes,
                         self.model.activation)

    @property
    def tag(self) -> str:
        if self.sched.mode == "sync":
            return f"sync-{self.inner.optimizer}+{self.outer.optimizer}"
        tag = f"async-{self.inner.optimizer}+{self.outer.optimizer}-{self.outer.strategy}"
        return tag + ("+dylu" if self.sched.dylu else "")

    def with_values(self, **flat) -> "ExperimentConfig":
        """Copy with ``section__key=value`` overrides, re-validated."""
        return _build({k.replace("__", "."): v for k, v in flat.items()}, base=self)


# ------------------------------------------------------------------- parsing

# config-file key -> dataclass field name, where they differ
_ALIASES = {"outer.lambda": ("outer", "lam")}


def _field_map():
    out = {}
    for sec in fields(ExperimentConfig):
        for f in fields(sec.default_factory()):
            out[f"{sec.name}.{f.name}"] = (sec.name, f.name)
    for alias, target in _ALIASES.items():
        out.pop(f"{target[0]}.{target[1]}", None)
        out[alias] = target
    return out


_FIELDS = _field_map()

_BOOL = {"true": True, "1": True, "yes": True, "on": True,
         "false": False, "0": False, "no": False, "off": False}


def _convert(key: str, default, annotation: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if annotation.startswith("tuple[int"):
            return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
        if annotation.startswith("tuple[float"):
            return tuple(float(v) for v in text.replace(" ", "").split(",") if v)
        if annotation == "bool":
            return _BOOL[text.lower()]
        if "None" in annotation and text.lower() in ("", "none", "auto"):
            return None
        if annotation.startswith("int"):
            return int(text)
        if annotation.startswith("float"):
            return float(text)
        return text
    except (ValueError, KeyError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {annotation}") from None


def _build(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    sections = {f.name: getattr(base, f.name) for f in fields(ExperimentConfig)}
    updates: dict[str, dict] = {}
    for key, raw in values.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        sec, name = _FIELDS[key]
        ftype = {f.name: f.type for f in fields(sections[sec])}[name]
        updates.setdefault(sec, {})[name] = _convert(key, getattr(sections[sec], name),
                                                     str(ftype), raw)
    for sec, kw in updates.items():
        sections[sec] = replace(sections[sec], **kw)
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{key}: given twice")
        values[key] = val
    return _build(values)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: ExperimentConfig) -> str:
    """Render every key; parse_config(dump_config(c)) == c."""
    inverse = {v: k for k, v in _FIELDS.items()}
    lines = []
    for sec in fields(ExperimentConfig):
        section = getattr(cfg, sec.name)
        for f in fields(section):
            val = getattr(section, f.name)
            if isinstance(val, tuple):
                text = ",".join(repr(v) for v in val)
            elif val is None:
                text = "auto"
            elif isinstance(val, bool):
                text = str(val).lower()
            else:
                text = repr(val) if isinstance(val, float) else str(val)
            lines.append(f"{inverse[(sec.name, f.name)]}={text}")
    return "\n".join(lines) + "\n"


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(f"{key}: {msg}")


def validate(cfg: ExperimentConfig) -> None:
    d, s, i, o = cfg.data, cfg.sched, cfg.inner, cfg.outer
    _require(d.num_classes >= 2, "data.num_classes", "must be >= 2")
    _require(d.components_per_class >= 1, "data.components_per_class", "must be >= 1")
    _require(d.dim >= 1, "data.dim", "must be >= 1")
    _require(d.covariance_scale > 0, "data.covariance_scale", "must be > 0")
    _require(d.shard_mode in ("iid", "by_component"), "data.shard_mode",
             "must be iid or by_component")
    _require(0.0 <= d.affinity <= 1.0, "data.affinity", "must lie in [0, 1]")
    _require(d.num_points >= s.workers, "data.num_points", "must be >= sched.workers")
    _require(d.eval_points >= 1, "data.eval_points", "must be >= 1")
    _require(d.batch_size >= 1, "data.batch_size", "must be >= 1")
    _require(all(h >= 1 for h in cfg.model.hidden_dims), "model.hidden_dims",
             "every entry must be >= 1")
    _require(cfg.model.activation in ("relu", "tanh"), "model.activation",
             "must be relu or tanh")

    _require(s.mode in ("async", "sync"), "sched.mode", "must be async or sync")
    _require(s.workers >= 1, "sched.workers", "must be >= 1")
    if s.speeds:
        _require(len(s.speeds) == s.workers, "sched.speeds",
                 f"needs {s.workers} entries (sched.workers), got {len(s.speeds)}")
        _require(all(v > 0 for v in s.speeds), "sched.speeds", "all speeds must be > 0")
    else:
        _require(s.profile in SPEED_PRESETS, "sched.profile",
                 f"must be one of {sorted(SPEED_PRESETS)}")
    _require(s.H >= 1, "sched.H", "must be >= 1")
    _require(s.grace_period is None or s.grace_period >= 0, "sched.grace_period",
             "must be >= 0")
    _require(s.t_max >= 0, "sched.t_max", "must be >= 0")
    _require(s.max_sim_time > 0, "sched.max_sim_time", "must be > 0")

    _require(i.optimizer in ("sgd", "adamw"), "inner.optimizer", "must be sgd or adamw")
    _require(i.lr > 0, "inner.lr", "must be > 0")
    _require(0 < i.lr_min < i.lr, "inner.lr_min", "must satisfy 0 < lr_min < inner.lr")
    _require(i.warmup >= 0, "inner.warmup", "must be >= 0")
    _require(i.total_steps is None or i.total_steps >= 1, "inner.total_steps", "must be >= 1")
    _require(0 <= i.beta1 < 1 and 0 <= i.beta2 < 1, "inner.beta1", "betas must lie in [0, 1)")
    _require(i.eps > 0, "inner.eps", "must be > 0")
    _require(i.weight_decay >= 0, "inner.weight_decay", "must be >= 0")

    _require(o.strategy in STRATEGIES, "outer.strategy", f"must be one of {STRATEGIES}")
    _require(o.optimizer in OUTER_OPTIMIZERS, "outer.optimizer",
             f"must be one of {OUTER_OPTIMIZERS}")
    _require(o.lr > 0, "outer.lr", "must be > 0")
    _require(0 <= o.beta < 1, "outer.beta", "must lie in [0, 1)")
    _require(o.N is None or o.N >= 1, "outer.N", "must be >= 1")
    n = cfg.buffer_size
    _require(0 <= o.c <= 1.0 / n, "outer.c", f"must lie in [0, 1/N] = [0, {1.0 / n:g}]")
    _require(o.lam >= 0, "outer.lambda", "must be >= 0")
    _require(o.poly_exponent >= 0, "outer.poly_exponent", "must be >= 0")
    _require(o.threshold >= 0, "outer.threshold", "must be >= 0")
    if s.mode == "sync":
        _require(o.strategy == "vanilla", "outer.strategy",
                 "sync mode averages all workers and only supports the vanilla strategy")
    _require(cfg.eval.every >= 1, "eval.every", "must be >= 1")


def config_keys() -> list[str]:
    return sorted(_FIELDS)


__all__ = [
    "ExperimentConfig", "ConfigError", "SPEED_PRESETS", "STRATEGIES", "parse_config",
    "load_config", "dump_config", "validate", "config_keys",
]
