"""Experiment configuration: one declarative document checked against a schema."""
from __future__ import annotations

import copy
import itertools
import json
from dataclasses import dataclass, field

import jsonschema
import yaml

from ..errors import ConfigError
from ..facts import DistanceMetric, FactClass
from ..render import RP_TEMPLATES, Scenario

METHODS = ("IO", "ID", "CoT", "SC", "SR", "HR")
CLIENT_KINDS = ("oracle", "random", "never", "remote")

_int_list = {"type": "array", "items": {"type": "integer"}, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer"},
        "dims": {**_int_list, "items": {"type": "integer", "minimum": 2, "maximum": 26}},
        "sizes": {**_int_list, "items": {"type": "integer", "minimum": 1, "maximum": 50}},
        "scenarios": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "tasks": {"type": "array", "minItems": 1, "items": {"enum": ["RI", "EI"]}},
        "samples": {"type": "integer", "minimum": 1},
        "perturb": {"type": "array", "minItems": 1, "items": {"type": "boolean"}},
        "method": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "name": {"enum": list(METHODS)},
                "shots": {"type": "integer", "minimum": 0},
                "t": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "max_errors": {"type": "integer", "minimum": 0},
                "temperature": {"type": "number", "minimum": 0},
            },
        },
        "constraint": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "classes": {"type": "array", "minItems": 1,
                            "items": {"enum": [None, "IF", "CF", "OF"]}},
                "epsilons": {**_int_list, "items": {"type": "integer", "minimum": 0, "maximum": 9}},
                "metric": {"type": "string"},
            },
        },
        "test_region": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "etas": {"type": "array", "minItems": 1,
                         "items": {"type": ["integer", "null"], "minimum": 0, "maximum": 9}},
                "n": {"type": "integer", "minimum": 0},
            },
        },
        "model": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(CLIENT_KINDS)},
                "id": {"type": "string"},
                "endpoint": {"type": "string"},
                "api_key_env": {"type": "string"},
                "timeout": {"type": "number", "exclusiveMinimum": 0},
                "max_tokens": {"type": "integer", "minimum": 1},
                "max_retries": {"type": "integer", "minimum": 1},
                "backoff": {"type": "number", "minimum": 0},
                "concurrency": {"type": "integer", "minimum": 1},
                "cache_dir": {"type": ["string", "null"]},
                "seed": {"type": "integer"},
            },
        },
        "equivalence": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["auto", "exhaustive", "sampled"]},
                "exhaustive_max_dim": {"type": "integer", "minimum": 1},
                "samples": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "dims": [3],
    "sizes": [5],
    "scenarios": ["LT", "RP:trade", "CG", "ST"],
    "tasks": ["RI", "EI"],
    "samples": 10,
    "perturb": [False],
    "method": {"name": "IO", "shots": 0, "t": 3, "n": 5, "max_errors": 3, "temperature": 0.0},
    "constraint": {"classes": [None], "epsilons": [0], "metric": "chebyshev"},
    "test_region": {"etas": [None], "n": 0},
    "model": {"kind": "oracle", "id": "oracle", "endpoint": "https://api.openai.com/v1",
              "api_key_env": "OPENAI_API_KEY", "timeout": 60.0, "max_tokens": 1024,
              "max_retries": 5, "backoff": 1.0, "concurrency": 4, "cache_dir": None, "seed": 0},
    "equivalence": {"mode": "auto", "exhaustive_max_dim": 5, "samples": 10000},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class Cell:
    dim: int
    size: int
    fact_class: str | None
    epsilon: int
    eta: int | None
    perturbed: bool

    @property
    def key(self) -> str:
        return (f"D{self.dim}-N{self.size}-{self.fact_class or 'any'}-e{self.epsilon}"
                f"-h{'inf' if self.eta is None else self.eta}-{'p' if self.perturbed else 'c'}")

    def tags(self) -> dict:
        return {"dim": self.dim, "size": self.size, "fact_class": self.fact_class,
                "epsilon": self.epsilon, "eta": self.eta, "perturbed": self.perturbed}


@dataclass
class ExperimentConfig:
    """Resolved experiment settings.  Build with ``from_dict`` or ``load``."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict | None = None, seed: int | None = None) -> "ExperimentConfig":
        raw = dict(raw or {})
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        data = _merge(DEFAULTS, raw)
        if seed is not None:
            data["seed"] = seed
        cfg = cls(data)
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path, seed: int | None = None) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("config document must be a mapping")
        return cls.from_dict(raw, seed)

    def _check(self):
        for text in self.scenarios:
            try:
                sc = Scenario.parse(text)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            if sc.kind == "RP":
                need = max(self.dims)
                have = len(RP_TEMPLATES[sc.template].objects)
                if need > have:
                    raise ConfigError(f"scenario {text} supports at most {have} dimensions, config asks for {need}")
            if sc.string_mode and self.method_name in ("SR", "HR"):
                raise ConfigError("SR and HR refine against numeric facts; drop ST from the scenarios")
        try:
            metric = DistanceMetric.parse(self.data["constraint"]["metric"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if "CF" in self.classes and metric.name != "chebyshev":
            raise ConfigError("cross-neighborhood facts are only defined for Chebyshev distance")
        for c in self.classes:
            if c is not None:
                FactClass(c)

    # convenient accessors
    def __getattr__(self, name):
        data = self.__dict__.get("data", {})
        if name in data:
            return data[name]
        raise AttributeError(name)

    @property
    def method_name(self) -> str:
        return self.data["method"]["name"]

    @property
    def classes(self) -> list:
        return self.data["constraint"]["classes"]

    @property
    def metric(self) -> DistanceMetric:
        return DistanceMetric.parse(self.data["constraint"]["metric"])

    def cells(self) -> list[Cell]:
        con, region = self.data["constraint"], self.data["test_region"]
        out = []
        for dim, size, cls, eps, eta, pert in itertools.product(
                self.dims, self.sizes, con["classes"], con["epsilons"], region["etas"], self.perturb):
            if cls is None and eps != con["epsilons"][0]:
                continue  # epsilon only matters with a class constraint
            out.append(Cell(dim, size, cls, eps if cls is not None else 0, eta, pert))
        return out

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_merge(self.data, overrides))
