"""Run configuration: dataclasses plus a flat ``key = value`` INI format.

Example::

    [train]
    steps = 50000
    gamma = 0.9
    critic_exponent = 0.55
    actor_exponent = 0.65
    subsample = 20

    [network]
    topology = grid:2x3
    scheme = metropolis

    [env]
    kind = resource

Unknown sections or keys are rejected so typos do not silently fall back to
defaults.
"""

import configparser
import dataclasses
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import AssumptionViolation, ConfigError


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "resource"
    params_seed: int = 0
    m_min: float = -50.0
    m_max: float = 50.0
    a_max: float = 10.0
    dt: float = 1.0
    m0: float = 10.0
    tbar0: float = 0.0
    amplitude_low: float = 5.0
    amplitude_high: float = 15.0
    omega_low: float = 0.05
    omega_high: float = 0.2
    noise_frac: float = 0.1
    reward_scale: float = 1e-4
    # quadratic toy task
    targets: tuple = (1.0, -0.5)
    weights: tuple = ()
    behavior_width: float = 1.5


@dataclass(frozen=True)
class FeatureConfig:
    n_features: int = 30
    width: float = 4.0
    seed: int = 0


@dataclass(frozen=True)
class EvalProtocol:
    horizon: int = 200
    rollouts: int = 20
    discounted: bool = False
    every: int = 50          # actor updates between evaluations; 0 disables
    final_window: int = 3    # evaluation points averaged for "final" performance

    def __post_init__(self):
        if self.horizon < 1 or self.rollouts < 1:
            raise ConfigError("evaluation horizon and rollouts must be >= 1")
        if self.every < 0 or self.final_window < 1:
            raise ConfigError("eval.every must be >= 0 and eval.final_window >= 1")


@dataclass(frozen=True)
class Seeds:
    env: int = 1
    behavior: int = 2
    gossip: int = 3
    init: int = 4
    eval: int = 5

    @classmethod
    def from_base(cls, base):
        """Independent per-stream seeds derived from one trial seed."""
        ss = np.random.SeedSequence(int(base))
        vals = ss.generate_state(5, dtype=np.uint32)
        return cls(*(int(v) for v in vals))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 50000
    gamma: float = 0.9
    critic_exponent: float = 0.55
    actor_exponent: float = 0.65
    subsample: int = 20
    grad_window: int = 1
    warmup: int = 0          # critic-only steps before the first actor update
    init_scale: float = 0.0
    topology: str = "grid:2x3"
    scheme: str = "metropolis"
    checkpoint_every: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)
    seed: int = 0
    seeds: Seeds = None

    def __post_init__(self):
        if self.seeds is None:
            object.__setattr__(self, "seeds", Seeds.from_base(self.seed))
        self.validate()

    def validate(self):
        if self.steps < 0:
            raise ConfigError("train.steps must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"train.gamma must lie in (0, 1), got {self.gamma}")
        if self.warmup < 0:
            raise ConfigError("train.warmup must be non-negative")
        if self.subsample < 1 or self.grad_window < 1:
            raise ConfigError("train.subsample and train.grad_window must be >= 1")
        for name in ("critic_exponent", "actor_exponent"):
            p = getattr(self, name)
            if not 0.5 < p <= 1.0:
                raise AssumptionViolation(
                    f"{name} = {p} must lie in (0.5, 1] so the steps are square summable "
                    "but not summable", assumption="step_sizes", value=p)
        if not self.actor_exponent > self.critic_exponent:
            raise AssumptionViolation(
                f"actor_exponent ({self.actor_exponent}) must exceed critic_exponent "
                f"({self.critic_exponent}) so the actor runs on the slower time scale",
                assumption="step_sizes",
                value=(self.critic_exponent, self.actor_exponent))

    def replace(self, **changes):
        if "seed" in changes and "seeds" not in changes:
            changes["seeds"] = None
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["env"] = EnvConfig(**_tuples(d["env"]))
        d["features"] = FeatureConfig(**d["features"])
        d["eval"] = EvalProtocol(**d["eval"])
        d["seeds"] = Seeds(**d["seeds"])
        return cls(**d)


def _tuples(d):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    trials: int = 5
    out_dir: str = "runs/default"
    plot: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("run.trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")


# --------------------------------------------------------------------------
# INI parsing

def _field_types(cls):
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


_SECTIONS = {
    "train": {"steps": int, "gamma": float, "critic_exponent": float,
              "actor_exponent": float, "subsample": int, "grad_window": int, "warmup": int,
              "init_scale": float, "checkpoint_every": int, "seed": int},
    "network": {"topology": str, "scheme": str},
    "env": _field_types(EnvConfig),
    "features": _field_types(FeatureConfig),
    "eval": _field_types(EvalProtocol),
    "seeds": _field_types(Seeds),
    "run": {"trials": int, "out_dir": str, "plot": bool, "workers": int},
}


def _convert(raw, typ, key):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            return tuple(float(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_text(text, overrides=None):
    """Parse INI text (plus ``section.key=value`` overrides) into a :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value)

    values = {name: {} for name in _SECTIONS}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        types = _SECTIONS[section]
        for key, raw in cp.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[section][key] = _convert(raw, types[key], f"{section}.{key}")

    env = EnvConfig(**values["env"])
    feats = FeatureConfig(**values["features"])
    proto = EvalProtocol(**values["eval"])
    seeds = Seeds(**values["seeds"]) if values["seeds"] else None
    train = TrainConfig(env=env, features=feats, eval=proto, seeds=seeds,
                        **values["train"], **values["network"])
    return RunConfig(train=train, **values["run"])


def load_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides)


def dump_config(run):
    """Render a :class:`RunConfig` back to INI text (round-trips through the parser)."""
    t = run.train
    out = ["[train]"]
    for k in _SECTIONS["train"]:
        out.append(f"{k} = {getattr(t, k)!r}")
    out += ["", "[network]", f"topology = {t.topology}", f"scheme = {t.scheme}"]
    for name, obj in (("env", t.env), ("features", t.features), ("eval", t.eval),
                      ("seeds", t.seeds)):
        out += ["", f"[{name}]"]
        for f in fields(obj):
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                v = " ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
    out += ["", "[run]", f"trials = {run.trials}", f"out_dir = {run.out_dir}",
            f"plot = {str(run.plot).lower()}", f"workers = {run.workers}", ""]
    return "\n".join(out)
