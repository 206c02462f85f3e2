"""Flat ``key = value`` experiment configuration.

One file describes a whole experiment: the world, the trainer and the
pseudo-labeling choices. A single ``seed`` key drives every random stream.
Unknown keys are rejected by name.
"""

import hashlib
from dataclasses import dataclass, field, fields

from .assignment import CONFIG_NAMES as ASSIGNMENT_NAMES, AssignmentStrategy
from .listen2student import CONFIG_NAMES as REGIME_NAMES, RegressionRegime
from .pseudolabel import CONFIG_NAMES as SELECTOR_NAMES, SelectorConfig
from .simworld import WorldConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _reverse(names):
    return {v: k for k, v in names.items()}


_WORLD_KEYS = tuple(f.name for f in fields(WorldConfig) if f.name != "generator_seed")
_TRAIN_KEYS = ("lr", "lambda_u", "burn_in_iters", "mutual_iters", "batch_labeled", "batch_unlabeled",
               "ema_rate", "eval_every", "eval_score_thr")
_CHOICE_KEYS = {
    "selector": ("class", "box-score"),
    "assignment": tuple(ASSIGNMENT_NAMES),
    "reg_loss": tuple(REGIME_NAMES),
}
_NESTED_KEYS = ("selector", "tau", "nms_iou", "assignment", "cs_radius", "reg_loss", "sigma", "sigma_s")
# keys that do not change results and stay out of the hash
_OUTPUT_KEYS = ("out",)


def _field_type(cls, name):
    return {f.name: f.type for f in fields(cls)}[name]


def _types():
    t = {k: _field_type(WorldConfig, k) for k in _WORLD_KEYS}
    t.update({k: _field_type(TrainConfig, k) for k in _TRAIN_KEYS})
    t.update(seed=int, tau=float, nms_iou=float, cs_radius=float, sigma=float, sigma_s=float,
             selector=str, assignment=str, reg_loss=str, out=str)
    return {k: {"int": int, "float": float, "str": str}.get(v, v) if isinstance(v, str) else v
            for k, v in t.items()}


KEY_TYPES = _types()
KEYS = ("seed",) + _WORLD_KEYS + _TRAIN_KEYS + _NESTED_KEYS + _OUTPUT_KEYS


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = "runs"

    @property
    def seed(self):
        return self.train.seed

    def validate(self):
        for part in (self.world, self.train):
            try:
                part.validate()
            except ValueError as exc:
                raise ConfigError(str(exc), _key_in(str(exc))) from None
        if self.world.generator_seed != self.train.seed:
            raise ConfigError("world and trainer seeds differ", "seed")
        return self

    def to_flat(self):
        w, t = self.world, self.train
        flat = {"seed": t.seed}
        flat.update({k: getattr(w, k) for k in _WORLD_KEYS})
        flat.update({k: getattr(t, k) for k in _TRAIN_KEYS})
        flat.update(
            selector=_reverse(SELECTOR_NAMES)[t.selector.mode], tau=t.selector.tau, nms_iou=t.selector.nms_iou,
            assignment=_reverse(ASSIGNMENT_NAMES)[t.assignment.kind], cs_radius=t.assignment.cs_radius,
            reg_loss=_reverse(REGIME_NAMES)[t.regime.kind], sigma=t.regime.sigma, sigma_s=t.regime.sigma_s,
            out=self.out,
        )
        return flat

    @classmethod
    def from_flat(cls, values):
        flat = cls().to_flat()
        for key, value in values.items():
            if key not in KEY_TYPES:
                raise ConfigError(f"unknown config key {key!r}", key)
            flat[key] = _coerce(key, value)
        for key, choices in _CHOICE_KEYS.items():
            if flat[key] not in choices:
                raise ConfigError(f"{key} must be one of {list(choices)}, got {flat[key]!r}", key)
        try:
            world = WorldConfig(generator_seed=flat["seed"], **{k: flat[k] for k in _WORLD_KEYS})
        except ValueError as exc:
            raise ConfigError(str(exc), _key_in(str(exc))) from None
        nested = {}
        for name, build in (
            ("selector", lambda: SelectorConfig.from_config(flat["selector"], flat["tau"], flat["nms_iou"])),
            ("assignment", lambda: AssignmentStrategy.from_config(flat["assignment"], flat["cs_radius"])),
            ("regime", lambda: RegressionRegime.from_config(flat["reg_loss"], flat["sigma"], flat["sigma_s"])),
        ):
            try:
                nested[name] = build()
            except ValueError as exc:
                raise ConfigError(str(exc), _key_in(str(exc)) or name) from None
        train = TrainConfig(seed=flat["seed"], **{k: flat[k] for k in _TRAIN_KEYS}, **nested)
        return cls(world, train, flat["out"]).validate()

    def override(self, **values):
        """Copy with flat keys replaced (``seed=3``, ``reg_loss="none"``, ...)."""
        flat = self.to_flat()
        flat.update(values)
        return ExperimentConfig.from_flat(flat)

    def to_text(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items())

    @classmethod
    def from_text(cls, text):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}", key)
            values[key] = value
        return cls.from_flat(values)

    def config_hash(self):
        """Short digest of every result-affecting key."""
        body = "".join(f"{k} = {_format(v)}\n" for k, v in self.to_flat().items() if k not in _OUTPUT_KEYS)
        return hashlib.sha256(body.encode()).hexdigest()[:16]


def _format(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, value):
    kind = KEY_TYPES[key]
    if isinstance(value, str) and kind is not str:
        try:
            return kind(value) if kind is float else int(value, 10)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}", key) from None
    if kind is int and isinstance(value, float):
        if not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}", key)
        return int(value)
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}", key)
    return value


def _key_in(message):
    """Best-effort name of the config key a component error message talks about."""
    for key in sorted(KEY_TYPES, key=len, reverse=True):
        if message.startswith(key) or f" {key} " in f" {message} ":
            return key
    return None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_text(fh.read())


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


__all__ = ["ConfigError", "ExperimentConfig", "KEYS", "load_config", "save_config"]
