"""Experiment configuration as flat ``section.key = value`` text.

Example::

    # Amazon Beauty
    run.seed = 42
    encoder.d = 128
    pretrain.lam = 0.4
    eval.seeds = 0,1,2,3,4,5,6,7,8,9

String values use Python backslash escapes; a literal ``#`` starts a
comment, so write it as ``\\x23``.

Sub-config ``seed`` fields are not configurable: every stage derives its
seed from ``run.seed`` (see :func:`bicat.experiment.stage_seed`).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace

from .augment import AugmentConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .finetune import FinetuneConfig
from .pretrain import PretrainConfig


@dataclass(frozen=True)
class DataConfig:
    interactions: str = ""
    columns: tuple = ("user", "item", "rating", "timestamp")
    delimiter: str = ","
    header: bool = False
    min_len: int = 3


@dataclass(frozen=True)
class EvalConfig:
    seeds: tuple = (0,)
    negatives: int = 100
    sampling: str = "uniform"  # or "popularity"
    ks: tuple = (1, 5, 10)
    full_ranking: bool = False
    export_sample: int = 0
    target: str = "test"

    def __post_init__(self):
        if self.sampling not in ("uniform", "popularity"):
            raise ValueError(f"unknown negative sampling {self.sampling!r}")
        if not self.seeds:
            raise ValueError("eval.seeds must not be empty")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = "out"


SECTIONS = {
    "run": RunConfig,
    "data": DataConfig,
    "encoder": EncoderConfig,
    "pretrain": PretrainConfig,
    "augment": AugmentConfig,
    "finetune": FinetuneConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = field(default_factory=RunConfig)
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def with_values(self, **dotted):
        """Copy with ``section__key=value`` overrides, e.g. ``run__seed=3``."""
        text = serialize(self)
        extra = "".join(f"{k.replace('__', '.')} = {_format(v)}\n" for k, v in dotted.items())
        return parse(text + extra)

    def fingerprint(self) -> str:
        """Digest of every setting except the output directory."""
        text = serialize(replace(self, run=replace(self.run, out="")))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _configurable(section, f):
    return not (section != "run" and f.name == "seed")


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        text = v.encode("unicode_escape").decode("ascii").replace("#", "\\x23")
        # keep edge spaces from being stripped by the parser
        if text[:1] == " ":
            text = "\\x20" + text[1:]
        if text[-1:] == " ":
            text = text[:-1] + "\\x20"
        return text
    return str(v)


def _convert(raw: str, default, where):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        return raw.encode("utf-8").decode("unicode_escape")
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def parse(text: str) -> ExperimentConfig:
    values = {name: {} for name in SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (x.strip() for x in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        known = {f.name: f for f in fields(SECTIONS[section]) if _configurable(section, f)}
        if name not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        f = known[name]
        values[section][name] = _convert(raw, f.default, f"line {lineno}")
    built = {}
    for section, cls in SECTIONS.items():
        try:
            built[section] = cls(**values[section])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [{section}] settings: {exc}") from exc
    return ExperimentConfig(**built)


def serialize(cfg: ExperimentConfig) -> str:
    lines = []
    for section in SECTIONS:
        sub = getattr(cfg, section)
        for f in fields(sub):
            if _configurable(section, f):
                lines.append(f"{section}.{f.name} = {_format(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def load(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read())


def override(cfg: ExperimentConfig, seed=None, out=None, strategy=None, rt=None) -> ExperimentConfig:
    """Apply CLI flag overrides."""
    if seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=seed))
    if out is not None:
        cfg = replace(cfg, run=replace(cfg.run, out=out))
    if strategy is not None:
        cfg = replace(cfg, augment=replace(cfg.augment, strategy=strategy))
    if rt:
        cfg = replace(cfg, finetune=replace(cfg.finetune, rt=True))
    return cfg
