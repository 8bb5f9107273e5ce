"""Experiment configuration: an INI file with typed, schema-validated sections.

Example::

    [run]
    seed = 0

    [dataset]
    generator = two_moons
    n_train = 2000
    noise = 0.1

    [model]
    hidden = 64, 64
    anchored = true

    [consistency]
    transforms = gaussian_noise:0.1, random_scale:0.8:1.2

Every key has a type and a default; ``[dataset] generator`` is required.
Unknown sections and keys are rejected.

Seeds: all randomness derives from ``run.seed`` through :func:`derive_seeds`,
which hashes ``(seed, stream index)`` with :class:`numpy.random.SeedSequence`
for the streams ``data, test, ood, init, shuffle, consistency, anchors, ntk``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Tuple

import numpy as np

from .anchoring import ConsistencySpec, Transform
from .errors import ConfigError
from .nn import SgdConfig
from .scoring import SCORE_RULES, TemperatureMode

SEED_STREAMS = ("data", "test", "ood", "init", "shuffle", "consistency", "anchors", "ntk")

TRANSFORM_SETS = {
    "none": (),
    "noise+scale": ("gaussian_noise:0.1", "random_scale:0.8:1.2"),
    "mask": ("random_mask:0.2",),
    "all": ("gaussian_noise:0.1", "random_scale:0.8:1.2", "random_mask:0.2"),
}


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(conv: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        return tuple(conv(p.strip()) for p in text.split(",") if p.strip())

    return parse


def _schedule(text: str) -> tuple:
    out = []
    for item in _list(str)(text):
        epoch, mult = item.split(":")
        out.append((int(epoch), float(mult)))
    return tuple(out)


def _points(text: str) -> tuple:
    return tuple(tuple(float(v) for v in p.split(",")) for p in text.split(";") if p.strip())


def _transforms(text: str) -> tuple:
    return tuple(Transform.parse(t) for t in _list(str)(text))


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"{t!r} is not one of {options}")
        return t

    return parse


REQUIRED = object()

SCHEMA: Dict[str, Dict[str, Tuple[Callable[[str], Any], Any]]] = {
    "run": {"seed": (int, 0)},
    "dataset": {
        "generator": (_choice("two_moons", "gaussian_blobs"), REQUIRED),
        "n_train": (int, 2000),
        "n_test": (int, 1000),
        "noise": (float, 0.1),
        "centers": (_points, ((0.0, 0.0), (3.0, 0.0), (1.5, 2.6))),
        "sigma": (float, 1.0),
    },
    "model": {"hidden": (_list(int), (64, 64)), "anchored": (_bool, True)},
    "sgd": {
        "lr": (float, 0.05),
        "momentum": (float, 0.9),
        "weight_decay": (float, 5e-4),
        "epochs": (int, 100),
        "batch_size": (int, 64),
        "schedule": (_schedule, ((60, 0.2),)),
    },
    "consistency": {
        "transforms": (_transforms, tuple(Transform.parse(t) for t in TRANSFORM_SETS["all"])),
        "apply_every": (int, 5),
    },
    "inference": {
        "k": (int, 5),
        "temperature": (_choice("softened", "direct"), "softened"),
        "epsilon": (float, 1e-6),
        "rules": (_list(_choice(*SCORE_RULES)), SCORE_RULES),
    },
    "ood": {
        "generator": (_choice("ring", "rotated", "corrupted", "id"), "ring"),
        "n": (int, 1000),
        "radius_factor": (float, 1.5),
        "width_factor": (float, 0.5),
        "rotation": (float, 0.5),
        "corruption": (_choice("gaussian_noise", "smoothing", "scale_shift"), "smoothing"),
        "level": (int, 5),
        "levels": (_list(int), (1, 2, 3, 4, 5)),
        "histogram_bins": (int, 30),
    },
    "ablate": {
        "anchors": (_list(int), (2, 5, 10, 20)),
        "transform_sets": (_list(_choice(*TRANSFORM_SETS)), tuple(TRANSFORM_SETS)),
    },
    "ntk": {
        "widths": (_list(int), (64, 256, 1024, 4096)),
        "pairs": (int, 20),
        "seeds": (int, 10),
        "dim": (int, 5),
        "grid": (int, 64),
        "anchor_norm": (float, 0.5),
        "demo_anchors": (int, 5),
        "demo_train": (int, 200),
        "demo_resolution": (int, 41),
    },
    "output": {"dir": (str, "out")},
}


@dataclass
class ExperimentConfig:
    values: Dict[str, Dict[str, Any]]
    source: str = "<memory>"

    def __getitem__(self, section: str) -> Dict[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        values["run"]["seed"] = int(seed)
        return ExperimentConfig(values, self.source)

    def replace(self, section: str, **kw) -> "ExperimentConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        for k in kw:
            if k not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{k}", f"{section}.{k}")
        values[section].update(kw)
        return validate(ExperimentConfig(values, self.source))

    def seeds(self) -> Dict[str, int]:
        return derive_seeds(self.seed)

    def sgd(self) -> SgdConfig:
        s = self.values["sgd"]
        return SgdConfig(s["lr"], s["momentum"], s["weight_decay"], s["schedule"], s["epochs"],
                         s["batch_size"], self.seeds()["shuffle"])

    def consistency(self, transforms=None) -> ConsistencySpec:
        c = self.values["consistency"]
        tf = c["transforms"] if transforms is None else transforms
        return ConsistencySpec(tf, c["apply_every"], self.seeds()["consistency"])

    def temperature(self) -> TemperatureMode:
        i = self.values["inference"]
        return TemperatureMode(i["temperature"], i["epsilon"])


def derive_seeds(seed: int) -> Dict[str, int]:
    return {
        name: int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0])
        for i, name in enumerate(SEED_STREAMS)
    }


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    v = cfg.values
    if v["dataset"]["n_train"] < 2 or v["dataset"]["n_test"] < 1:
        raise ConfigError("dataset.n_train must be >= 2 and n_test >= 1", "dataset.n_train")
    if v["inference"]["k"] < 1:
        raise ConfigError("inference.k must be >= 1", "inference.k")
    if v["inference"]["k"] > v["dataset"]["n_train"]:
        raise ConfigError("inference.k exceeds the training-set size", "inference.k")
    if any(not 1 <= lv <= 5 for lv in v["ood"]["levels"]) or not 1 <= v["ood"]["level"] <= 5:
        raise ConfigError("corruption levels must lie in 1..5", "ood.levels")
    if v["ood"]["histogram_bins"] < 1:
        raise ConfigError("ood.histogram_bins must be >= 1", "ood.histogram_bins")
    if any(k < 1 for k in v["ablate"]["anchors"]):
        raise ConfigError("ablate.anchors must be >= 1", "ablate.anchors")
    if v["ntk"]["grid"] < 2:
        raise ConfigError("ntk.grid must be >= 2", "ntk.grid")
    try:
        cfg.sgd()
        cfg.consistency()
        cfg.temperature()
    except ValueError as exc:
        raise ConfigError(str(exc), "sgd") from exc
    return cfg


def parse(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__no_defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", section)
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}", f"{section}.{key}")

    values: Dict[str, Dict[str, Any]] = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            if parser.has_option(section, key):
                raw = parser[section][key]
                try:
                    values[section][key] = conv(raw)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {exc}", f"{section}.{key}") from exc
            elif default is REQUIRED:
                name = section if not parser.has_section(section) else f"{section}.{key}"
                raise ConfigError(f"missing required {name}", name)
            else:
                values[section][key] = default
    return validate(ExperimentConfig(values, source))


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", "config") from exc
    return parse(text, str(path))
