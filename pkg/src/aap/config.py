"""Run configuration: strict sectioned INI files.

Every key is documented in ``docs/formats.md``.  Unknown sections or keys are
rejected, and every failure is reported as :class:`ConfigError` naming the
offending ``section.key``.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .drift import DriftRegime, nav2d_regime, particle_regime
from .envs.nav2d import Nav2DConfig, NoiseSpec
from .envs.particle import ParticleConfig
from .policy import VARIANTS, ActionPolicy, ModelDims
from .tasks import TASK_NAMES, TaskSpec, get_task
from .trainer import TrainConfig

SECTIONS = ("run", "drift", "noise", "train", "model", "eval", "env")
DISABLE_CHOICES = ("none", "left", "right")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 100
    batch: int = 50
    seed: int = 20_000
    disable: str = "none"
    cross: bool = False

    def __post_init__(self):
        if self.episodes <= 0:
            raise ValueError("episodes must be > 0")
        if self.batch <= 0:
            raise ValueError("batch must be > 0")
        if self.disable not in DISABLE_CHOICES:
            raise ValueError(f"disable must be one of {DISABLE_CHOICES}")


@dataclass(frozen=True)
class DriftConfig:
    p: float
    q: float
    eval_dm: tuple[float, ...]
    eval_dr: tuple[float, ...]


@dataclass(frozen=True)
class RunConfig:
    task: str
    variant: str = "aap"
    seeds: tuple[int, ...] = (0,)
    out: str = "runs/default"
    drift: DriftConfig | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelDims = field(default_factory=ModelDims)
    eval: EvalConfig = field(default_factory=EvalConfig)
    env: dict = field(default_factory=dict)

    @property
    def task_spec(self) -> TaskSpec:
        return get_task(self.task)

    @property
    def env_overrides(self) -> dict:
        return dict(self.env)

    def regime(self, mode: str) -> DriftRegime:
        d = self.drift
        return DriftRegime(mode, d.p, d.q, d.eval_dm, d.eval_dr, self.eval.cross)

    def to_dict(self) -> dict:
        return {
            "run": {"task": self.task, "variant": self.variant, "seeds": list(self.seeds), "out": self.out},
            "drift": {"p": self.drift.p, "q": self.drift.q, "eval_dm": list(self.drift.eval_dm),
                      "eval_dr": list(self.drift.eval_dr)},
            "noise": dataclasses.asdict(self.noise),
            "train": dataclasses.asdict(self.train),
            "model": dataclasses.asdict(self.model),
            "eval": dataclasses.asdict(self.eval),
            "env": dict(sorted(self.env.items())),
        }

    def config_hash(self) -> str:
        """Hash of everything a checkpoint's parameters depend on structurally."""
        d = self.to_dict()
        key = {"task": self.task, "variant": self.variant, "model": d["model"], "env": d["env"]}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        return dict_to_ini(self.to_dict())


def dict_to_ini(d: dict) -> str:
    lines = []
    for section, values in d.items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            if isinstance(v, (list, tuple)):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)


def task_defaults(task: str) -> dict:
    """Per-task defaults for the drift, noise, train and model sections."""
    if task.startswith("nav2d"):
        reg = nav2d_regime("eval")
        drift = DriftConfig(reg.p, reg.q, reg.eval_dm, reg.eval_dr)
        train = TrainConfig(lr=3e-4, rollout_length=128, total_steps=5_000_000)
        return {"drift": drift, "noise": NoiseSpec(), "train": train, "model": ModelDims.nav2d_default()}
    reg = particle_regime("eval")
    drift = DriftConfig(reg.p, reg.q, reg.eval_dm, reg.eval_dr)
    train = TrainConfig(lr=1e-3, rollout_length=200, total_steps=2_000_000)
    return {"drift": drift, "noise": NoiseSpec(0.0, 0.0), "train": train, "model": ModelDims()}


def _convert(section: str, key: str, raw: str, kind):
    name = f"{section}.{key}"
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            return float(raw)
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def _field_kinds(cls) -> dict:
    kinds = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        kinds[f.name] = {"int": int, "float": float, "bool": bool, "str": str}.get(t, str)
    return kinds


def _build(cls, base, section: str, items: dict):
    kinds = _field_kinds(cls)
    values = dataclasses.asdict(base) if base is not None else {}
    for key, raw in items.items():
        if key not in kinds:
            raise ConfigError(f"{section}.{key}", f"unknown key (allowed: {', '.join(sorted(kinds))})")
        values[key] = _convert(section, key, raw, kinds[key])
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(section, str(exc)) from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section (allowed: {', '.join(SECTIONS)})")
    get = {s: dict(parser[s]) if parser.has_section(s) else {} for s in SECTIONS}

    run = get["run"]
    allowed_run = {"task", "variant", "seeds", "out"}
    for key in run:
        if key not in allowed_run:
            raise ConfigError(f"run.{key}", f"unknown key (allowed: {', '.join(sorted(allowed_run))})")
    if "task" not in run:
        raise ConfigError("run.task", "missing required field")
    task = run["task"].strip()
    if task not in TASK_NAMES:
        raise ConfigError("run.task", f"unknown task {task!r} (allowed: {', '.join(TASK_NAMES)})")
    variant = run.get("variant", "aap").strip()
    if variant not in VARIANTS:
        raise ConfigError("run.variant", f"unknown variant {variant!r} (allowed: {', '.join(VARIANTS)})")
    seeds = _convert("run", "seeds", run.get("seeds", "0"), "ints")
    if not seeds:
        raise ConfigError("run.seeds", "at least one seed required")
    out = run.get("out", f"runs/{task}-{variant}").strip()

    d = task_defaults(task)
    drift_items = dict(get["drift"])
    dvals = dataclasses.asdict(d["drift"])
    for key, raw in drift_items.items():
        if key not in dvals:
            raise ConfigError(f"drift.{key}", f"unknown key (allowed: {', '.join(sorted(dvals))})")
        kind = "floats" if key.startswith("eval_") else float
        dvals[key] = _convert("drift", key, raw, kind)
    if dvals["p"] < 0 or dvals["q"] < 0:
        raise ConfigError("drift", "p and q must be nonnegative")
    drift = DriftConfig(dvals["p"], dvals["q"], tuple(dvals["eval_dm"]), tuple(dvals["eval_dr"]))

    env_cls = Nav2DConfig if task.startswith("nav2d") else ParticleConfig
    env_kinds = _field_kinds(env_cls)
    env = {}
    for key, raw in get["env"].items():
        if key not in env_kinds:
            raise ConfigError(f"env.{key}", f"unknown key (allowed: {', '.join(sorted(env_kinds))})")
        env[key] = _convert("env", key, raw, env_kinds[key])
    try:
        env_cls(**env)
    except (TypeError, ValueError) as exc:
        raise ConfigError("env", str(exc)) from None

    return RunConfig(
        task=task, variant=variant, seeds=seeds, out=out, drift=drift,
        noise=_build(NoiseSpec, d["noise"], "noise", get["noise"]),
        train=_build(TrainConfig, d["train"], "train", get["train"]),
        model=_build(ModelDims, d["model"], "model", get["model"]),
        eval=_build(EvalConfig, EvalConfig(), "eval", get["eval"]),
        env=env,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def config_from_dict(d: dict) -> RunConfig:
    """Rebuild a RunConfig from :meth:`RunConfig.to_dict` output (stored in checkpoints)."""
    return parse_config(dict_to_ini(d), "<checkpoint>")


def build_policy(run: RunConfig, seed: int) -> ActionPolicy:
    return ActionPolicy(run.task_spec, run.variant, run.model, seed=seed)
