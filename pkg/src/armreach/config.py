"""Configuration types and the flat ``dotted.key = value`` file format.

A config file is plain text, one assignment per line::

    # comments start with '#'
    env.variant = hybrid
    env.requirement = pos-vel-acc
    env.noise.sigma1 = 0.103
    arm.f_max = [300, 300, 300, 300, 300, 300]
    opt.iterations = 200

Values are parsed as JSON when possible (numbers, lists, ``true``/``null``)
and fall back to bare strings.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
import json
import math
from pathlib import Path
from typing import Any

from .dynamics import ArmParams

SCHEMA_VERSION = 1

VARIANTS = ("baseline", "execution-noise", "optimality-principles", "hybrid")
REQUIREMENTS = ("pos", "pos-vel", "pos-vel-acc")
DEFAULT_P_TOLS = (0.105, 0.045, 0.021, 0.010161)


class ConfigError(ValueError):
    pass


@dataclass
class NoiseParams:
    sigma1: float = 0.103  # signal-dependent
    sigma2: float = 0.185  # constant
    cadence: int = 1  # control steps between fresh draws

    def validate(self) -> None:
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ConfigError("noise std must be nonnegative")
        if self.cadence < 1:
            raise ConfigError("noise cadence must be >= 1")


@dataclass
class RewardWeights:
    c1: float = 0.2
    c2: float = 0.8
    c3: float = 1.0
    c4: float = 8.0
    c5: float = 1.0
    jerk_max: float = 1000.0
    work_max: float = 100.0

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"reward weight {f.name} must be nonnegative")
        if self.c3 + self.c4 + self.c5 <= 0:
            raise ConfigError("c3 + c4 + c5 must be positive")
        if self.jerk_max <= 0 or self.work_max <= 0:
            raise ConfigError("normalizers must be positive")


@dataclass
class GoalSpec:
    p_tol: float = 0.105
    distance: float = 0.63  # nominal D for the index of difficulty
    eval_offset: tuple[float, float] = (-0.295, 0.557)  # from the initial hand position
    # training goals: annulus as fractions of total arm length, polar angle
    # from the downward vertical in degrees
    r_min: float = 0.25
    r_max: float = 0.95
    angle_min: float = -30.0
    angle_max: float = 180.0

    def validate(self) -> None:
        if self.p_tol <= 0 or self.distance <= 0:
            raise ConfigError("p_tol and distance must be positive")
        if not 0 <= self.r_min < self.r_max <= 1:
            raise ConfigError("goal annulus fractions must satisfy 0 <= r_min < r_max <= 1")
        if not self.angle_min < self.angle_max:
            raise ConfigError("goal angle range is empty")
        self.eval_offset = tuple(float(x) for x in self.eval_offset)

    @property
    def width(self) -> float:
        return 2 * self.p_tol


@dataclass
class EnvConfig:
    variant: str = "baseline"
    requirement: str = "pos"
    v_tol: float = 0.20
    a_tol: float = 0.10
    mode: str = "train"  # "train": random goals; "eval": fixed goal
    dt: float = 0.002
    substeps: int = 5
    horizon: int = 500
    initial_q: tuple[float, float] = (0.0, math.pi / 2)
    noise: NoiseParams = field(default_factory=NoiseParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    goal: GoalSpec = field(default_factory=GoalSpec)
    arm: ArmParams = field(default_factory=ArmParams)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.requirement not in REQUIREMENTS:
            raise ConfigError(f"unknown requirement {self.requirement!r}; expected one of {REQUIREMENTS}")
        if self.mode not in ("train", "eval"):
            raise ConfigError("mode must be 'train' or 'eval'")
        if self.v_tol <= 0 or self.a_tol <= 0:
            raise ConfigError("v_tol and a_tol must be strictly positive")
        if self.dt <= 0 or self.substeps < 1 or self.horizon < 1:
            raise ConfigError("timing parameters must be positive")
        self.initial_q = tuple(float(x) for x in self.initial_q)
        self.noise.validate()
        self.reward.validate()
        self.goal.validate()
        try:
            self.arm.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def noise_enabled(self) -> bool:
        return self.variant in ("execution-noise", "hybrid")

    @property
    def optimality_enabled(self) -> bool:
        return self.variant in ("optimality-principles", "hybrid")

    @property
    def control_dt(self) -> float:
        return self.dt * self.substeps

    def with_(self, **changes) -> "EnvConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        return _build(cls, d)


@dataclass
class OptimizerConfig:
    population: int = 64
    elite_frac: float = 0.125
    sigma_init: float = 0.1
    sigma_floor: float = 0.01
    iterations: int = 200
    episodes: int | None = None  # None: 1 for deterministic variants, 3 for noisy
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.population < 4:
            raise ConfigError("population must be >= 4")
        if not 0 < self.elite_frac <= 0.5:
            raise ConfigError("elite_frac must lie in (0, 0.5]")
        if self.sigma_init <= 0 or self.sigma_floor <= 0:
            raise ConfigError("optimizer stds must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.episodes is not None and self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    def episodes_for(self, env: EnvConfig) -> int:
        if self.episodes is not None:
            return self.episodes
        return 3 if env.noise_enabled else 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return _build(cls, d)


def _build(cls, d: dict):
    """Instantiate a (nested) dataclass from a plain dict, rejecting unknown keys."""
    if cls is ArmParams:
        try:
            return ArmParams.from_dict(d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = getattr(cls(), name) if name in _NESTED.get(cls.__name__, ()) else None
        if default is not None and is_dataclass(default):
            kwargs[name] = _build(type(default), value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


_NESTED = {"EnvConfig": ("noise", "reward", "goal", "arm")}


# ---------------------------------------------------------------------------
# flat dotted-key text format
# ---------------------------------------------------------------------------


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def format_value(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        value = list(value)
    return json.dumps(value)


def parse_flat(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def unflatten(flat: dict[str, Any]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key, value in flat.items():
        node = tree
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key {key!r} conflicts with a scalar")
        node[leaf] = value
    return tree


def flatten(tree: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in tree.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def dump_flat(tree: dict[str, Any]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in flatten(tree).items())


@dataclass
class GridSpec:
    variants: tuple[str, ...] = VARIANTS
    requirements: tuple[str, ...] = REQUIREMENTS
    p_tols: tuple[float, ...] = DEFAULT_P_TOLS
    seed: int = 0
    # warm-start each tighter tolerance from the previous one of the same column
    warm_start: bool = True

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        # a bare value stands for a one-element axis
        self.variants = (self.variants,) if isinstance(self.variants, str) else tuple(self.variants)
        self.requirements = (self.requirements,) if isinstance(self.requirements, str) else tuple(self.requirements)
        p_tols = self.p_tols if isinstance(self.p_tols, (list, tuple)) else [self.p_tols]
        try:
            self.p_tols = tuple(float(p) for p in p_tols)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad p_tol list: {exc}") from exc
        if not (self.variants and self.requirements and self.p_tols):
            raise ConfigError("grid axes must be non-empty")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        for r in self.requirements:
            if r not in REQUIREMENTS:
                raise ConfigError(f"unknown requirement {r!r}")
        if min(self.p_tols) <= 0:
            raise ConfigError("p_tol values must be positive")
        if len(set(self.variants)) != len(self.variants) or len(set(self.requirements)) != len(
            self.requirements
        ) or len(set(self.p_tols)) != len(self.p_tols):
            raise ConfigError("grid axes must not repeat values")

    def cells(self) -> list[tuple[str, str, float]]:
        return [(v, r, p) for v in self.variants for r in self.requirements for p in self.p_tols]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunConfig:
    """Everything a harness run needs: grid axes, base environment, optimizer."""

    env: EnvConfig = field(default_factory=EnvConfig)
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    grid: GridSpec = field(default_factory=GridSpec)

    def to_dict(self) -> dict:
        return {"env": self.env.to_dict(), "opt": self.opt.to_dict(), "grid": self.grid.to_dict()}

    def dumps(self) -> str:
        return f"schema_version = {SCHEMA_VERSION}\n" + dump_flat(self.to_dict())

    @classmethod
    def from_dict(cls, tree: dict) -> "RunConfig":
        tree = dict(tree)
        version = tree.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config schema version {version} != {SCHEMA_VERSION}")
        unknown = set(tree) - {"env", "opt", "grid"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        grid = tree.get("grid", {})
        unknown = set(grid) - {f.name for f in fields(GridSpec)}
        if unknown:
            raise ConfigError(f"unknown GridSpec keys: {sorted(unknown)}")
        try:
            grid_spec = GridSpec(**grid)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            env=EnvConfig.from_dict(tree.get("env", {})),
            opt=OptimizerConfig.from_dict(tree.get("opt", {})),
            grid=grid_spec,
        )

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_dict(unflatten(parse_flat(text)))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.loads(Path(path).read_text())
