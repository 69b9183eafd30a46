"""INI-style experiment configuration with strict key checking.

Sections and keys are fixed by :data:`SCHEMA`; anything else is an error, so a
typo can never silently fall back to a default.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attacks import AttackSpec
from .errors import ConfigError
from .training import TrainSpec


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _choice(*options):
    def parse(text):
        v = text.strip().lower()
        if v not in options:
            raise ValueError(f"expected one of {options}, got {text!r}")
        return v
    return parse


def _nonneg(kind):
    def parse(text):
        v = kind(text)
        if v < 0:
            raise ValueError("must be non-negative")
        return v
    return parse


def _pos(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise ValueError("must be positive")
        return v
    return parse


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise ValueError("must lie in (0, 1]")
    return v


# section -> key -> (parser, default); default None means "unset/optional"
SCHEMA = {
    "data": {
        "source": (_choice("digits", "blobs", "idx"), "digits"),
        "train_images": (str, None),
        "train_labels": (str, None),
        "test_images": (str, None),
        "test_labels": (str, None),
        "classes": (_ints, ()),
        "n_train": (_pos(int), 1200),
        "n_test": (_pos(int), 300),
        "data_seed": (_nonneg(int), 0),
        "upsample": (_pos(int), 1),
        "n_per_class": (_pos(int), 100),
        "n_test_per_class": (_pos(int), 50),
        "n_classes": (_pos(int), 3),
        "dim": (_pos(int), 16),
        "margin": (_pos(float), 0.5),
    },
    "model": {
        "kind": (_choice("mlp", "cnn"), "mlp"),
        "hidden": (_ints, (64, 64)),
    },
    "noise": {
        "dist": (_choice("laplace", "gaussian", "uniform"), "laplace"),
        "p_noise": (_nonneg(float), 0.0),
        "basis": (_choice("identity", "image"), "identity"),
        "frozen": (_bool, False),
    },
    "train": {
        "base": (_choice("pgd", "fgsm", "vanilla"), "pgd"),
        "epochs": (_pos(int), 30),
        "batch_size": (_pos(int), 50),
        "lr_schedule": (_choice("step", "cyclic"), "step"),
        "base_lr": (_pos(float), 0.05),
        "milestones": (_ints, ()),
        "momentum": (_nonneg(float), 0.9),
        "weight_decay": (_nonneg(float), 5e-4),
        "update_freq": (_pos(int), 10),
        "update_subset_fraction": (_fraction, 0.2),
        "update_batch_size": (_pos(int), 256),
        "update_eps": (_nonneg(float), 1.8),
        "update_alpha": (_opt_float, None),
        "update_steps": (_nonneg(int), 10),
        "update_n0": (_pos(int), 4),
        "base_eps": (_nonneg(float), 0.1),
        "base_alpha": (_opt_float, 0.025),
        "base_steps": (_nonneg(int), 10),
        "train_n0": (_pos(int), 1),
    },
    "attack": {
        "linf_eps": (_nonneg(float), 0.1),
        "l2_eps": (_nonneg(float), 0.7),
        "l1_eps": (_nonneg(float), 2.0),
        "linf_alpha": (_opt_float, None),
        "l2_alpha": (_opt_float, None),
        "l1_alpha": (_opt_float, None),
        "steps": (_nonneg(int), 100),
        "l1_k": (_pos(int), 2),
        "eot_samples": (_pos(int), 8),
    },
    "eval": {
        "n0_samples": (_pos(int), 8),
        "restarts": (_pos(int), 10),
        "batch_size": (_pos(int), 500),
        "n_examples": (_nonneg(int), 0),  # 0 = whole test split
    },
    "run": {
        "seed": (_nonneg(int), 0),
        "output_dir": (str, "runs/default"),
    },
}

PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels")
OUTPUT_ENV = "SNAPLAB_OUTPUT_DIR"


def _line_of(text, section, key=None):
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return lineno
        elif current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            if name == key:
                return lineno
    return None


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<defaults>"
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    @property
    def output_dir(self):
        out = Path(self.values["run"]["output_dir"])
        return out if out.is_absolute() else self.base_dir / out

    def canonical(self):
        def plain(v):
            if isinstance(v, tuple):
                return list(v)
            if isinstance(v, Path):
                return str(v)
            return v
        body = {s: {k: plain(v) for k, v in sorted(kv.items())} for s, kv in sorted(self.values.items())}
        body["run"].pop("output_dir", None)
        return json.dumps(body, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def train_spec(self) -> TrainSpec:
        t = self.values["train"]
        update = AttackSpec("l2", t["update_eps"], alpha=t["update_alpha"], steps=t["update_steps"],
                            restarts=1, eot_samples=t["update_n0"], rand_init=False)
        base = AttackSpec("linf", t["base_eps"], alpha=t["base_alpha"], steps=t["base_steps"], restarts=1)
        return TrainSpec(base=t["base"], epochs=t["epochs"], batch_size=t["batch_size"],
                         lr_kind=t["lr_schedule"], base_lr=t["base_lr"], milestones=t["milestones"],
                         momentum=t["momentum"], weight_decay=t["weight_decay"], update_freq=t["update_freq"],
                         update_subset_fraction=t["update_subset_fraction"],
                         update_batch_size=t["update_batch_size"], update_attack=update,
                         base_attack=base, train_n0=t["train_n0"], seed=self.seed)

    def attack_specs(self):
        a, e = self.values["attack"], self.values["eval"]
        return [AttackSpec(norm, a[f"{norm}_eps"], alpha=a[f"{norm}_alpha"], steps=a["steps"],
                           restarts=e["restarts"], eot_samples=a["eot_samples"], l1_k=a["l1_k"])
                for norm in ("linf", "l2", "l1")]

    def with_overrides(self, overrides):
        values = {s: dict(kv) for s, kv in self.values.items()}
        for item in overrides:
            _apply_override(values, item)
        return ExperimentConfig(values, self.source, self.base_dir)


def _parse_value(section, key, text, where):
    if section not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}: unknown key {key!r} in section [{section}]")
    parser = SCHEMA[section][key][0]
    try:
        return parser(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value for {section}.{key}: {exc}") from None


def _apply_override(values, item):
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    lhs, text = item.split("=", 1)
    section, key = (p.strip().lower() for p in lhs.split(".", 1))
    values.setdefault(section, {})
    values[section][key] = _parse_value(section, key, text.strip(), f"override {item!r}")


def defaults():
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _validate(cfg: ExperimentConfig, text=""):
    d = cfg.values["data"]
    if d["source"] == "idx":
        for key in PATH_KEYS:
            if not d[key]:
                raise ConfigError(f"{cfg.source}: data.{key} is required for source=idx")
            path = cfg.resolve(d[key])
            if not path.exists():
                line = _line_of(text, "data", key)
                where = f"{cfg.source}:{line}" if line else cfg.source
                raise ConfigError(f"{where}: data file not found: {path}")
    if d["classes"] and len(set(d["classes"])) < 2:
        raise ConfigError(f"{cfg.source}: data.classes needs at least two labels")
    if cfg.values["train"]["update_subset_fraction"] <= 0:
        raise ConfigError("train.update_subset_fraction must be positive")
    return cfg


def load_config(path, overrides=()) -> ExperimentConfig:
    """Parse ``path``; ``overrides`` are ``section.key=value`` strings applied on top."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = defaults()
    cfg.source, cfg.base_dir = str(path), path.parent.resolve()
    for section in parser.sections():
        line = _line_of(text, section)
        if section not in SCHEMA:
            raise ConfigError(f"{path}:{line}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{path}:{_line_of(text, section, key)}"
            cfg.values[section][key] = _parse_value(section, key, raw, where)
    cfg = cfg.with_overrides(overrides)
    env_out = os.environ.get(OUTPUT_ENV)
    if env_out:
        cfg.values["run"]["output_dir"] = env_out
    return _validate(cfg, text)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            v = cfg.values[section][key]
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, (float, np.floating)):
                v = repr(float(v))
            lines.append(f"{key} = {v}")
        lines.append("")
    return "\n".join(lines)
