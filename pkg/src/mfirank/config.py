"""Pipeline configuration: defaults, JSON config files, CLI overrides.

A run's behaviour is fully described by a PipelineConfig.  Values come
from built-in defaults, then an optional JSON file, then command-line
flags, later sources winning.  Every output artifact embeds
``digest()``, a SHA-256 over the canonical JSON form of the resolved
configuration, so results can be traced back to the exact settings that
produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .data import (
    DEFAULT_SCHEMA,
    LoanType,
    SchemaConfig,
    Status,
)
from .errors import ConfigError
from .features import ALL_FEATURES, DEFAULT_DURATION_RULES, DurationRule

_LOAN_TYPE_FLAGS = {
    "standard": LoanType.STANDARD,
    "long-term": LoanType.LONG_TERM,
    "interest-free": LoanType.INTEREST_FREE,
    "all": None,
}

_CONFIG_KEYS = {
    "features",
    "loan_type",
    "damping",
    "tie_eps",
    "min_support",
    "confidence_level",
    "timestamp_format",
    "status_map",
    "loan_type_map",
    "true_strings",
    "false_strings",
    "column_aliases",
    "duration_rules",
    "page_constraints",
}


@dataclass(frozen=True)
class PipelineConfig:
    features: tuple[str, ...] = ALL_FEATURES
    loan_type: LoanType | None = LoanType.STANDARD
    damping: float = 0.0
    tie_eps: float = 1e-9
    min_support: int = 5
    confidence_level: float = 0.995
    schema: SchemaConfig = DEFAULT_SCHEMA
    duration_rules: tuple[DurationRule, ...] = DEFAULT_DURATION_RULES
    page_constraints: Mapping[str, Any] | None = None

    def to_dict(self) -> dict:
        """Canonical JSON-able form; everything that affects results."""
        return {
            "features": list(self.features),
            "loan_type": self.loan_type.value if self.loan_type else "all",
            "damping": self.damping,
            "tie_eps": self.tie_eps,
            "min_support": self.min_support,
            "confidence_level": self.confidence_level,
            "timestamp_format": self.schema.timestamp_format,
            "status_map": {k: v.value for k, v in sorted(self.schema.status_map.items())},
            "loan_type_map": {
                k: v.value for k, v in sorted(self.schema.loan_type_map.items())
            },
            "true_strings": sorted(self.schema.true_strings),
            "false_strings": sorted(self.schema.false_strings),
            "column_aliases": dict(sorted(self.schema.column_aliases.items())),
            "duration_rules": [
                {"pattern": r.pattern, "scale": r.scale} for r in self.duration_rules
            ],
            "page_constraints": dict(self.page_constraints)
            if self.page_constraints
            else None,
        }

    def digest(self) -> str:
        canonical = json.dumps(
            self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _validated(config: PipelineConfig) -> PipelineConfig:
    if not config.features:
        raise ConfigError("at least one feature must be enabled")
    unknown = [f for f in config.features if f not in ALL_FEATURES]
    if unknown:
        raise ConfigError(f"unknown features {unknown}; choose from {list(ALL_FEATURES)}")
    if len(set(config.features)) != len(config.features):
        raise ConfigError("duplicate feature names")
    if not 0.0 <= config.damping < 1.0:
        raise ConfigError("damping must lie in [0, 1)")
    if config.tie_eps <= 0.0:
        raise ConfigError("tie_eps must be positive")
    if config.min_support < 0:
        raise ConfigError("min_support must be non-negative")
    if not 0.0 < config.confidence_level < 1.0:
        raise ConfigError("confidence_level must lie in (0, 1)")
    return config


def parse_loan_type_flag(value: str) -> LoanType | None:
    try:
        return _LOAN_TYPE_FLAGS[value.strip().lower()]
    except KeyError:
        raise ConfigError(
            f"unknown loan type {value!r}; choose from {sorted(_LOAN_TYPE_FLAGS)}"
        ) from None


def _schema_from(data: Mapping[str, Any]) -> SchemaConfig:
    kwargs: dict[str, Any] = {}
    if "timestamp_format" in data:
        kwargs["timestamp_format"] = str(data["timestamp_format"])
    if "status_map" in data:
        try:
            kwargs["status_map"] = {
                str(k).lower(): Status(str(v)) for k, v in data["status_map"].items()
            }
        except ValueError as exc:
            raise ConfigError(f"bad status_map: {exc}") from None
    if "loan_type_map" in data:
        try:
            kwargs["loan_type_map"] = {
                str(k).lower(): LoanType(str(v)) for k, v in data["loan_type_map"].items()
            }
        except ValueError as exc:
            raise ConfigError(f"bad loan_type_map: {exc}") from None
    if "true_strings" in data:
        kwargs["true_strings"] = frozenset(str(s).lower() for s in data["true_strings"])
    if "false_strings" in data:
        kwargs["false_strings"] = frozenset(str(s).lower() for s in data["false_strings"])
    if "column_aliases" in data:
        kwargs["column_aliases"] = {
            str(k): str(v) for k, v in data["column_aliases"].items()
        }
    return replace(DEFAULT_SCHEMA, **kwargs) if kwargs else DEFAULT_SCHEMA


def load_config(
    path: str | None = None, overrides: Mapping[str, Any] | None = None
) -> PipelineConfig:
    """Resolve the effective configuration.

    ``overrides`` holds already-typed values from command-line flags
    (None entries are ignored); flags beat the file, the file beats the
    defaults.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    config = PipelineConfig(schema=_schema_from(data))
    if "features" in data:
        if not isinstance(data["features"], list):
            raise ConfigError("features must be a list of feature names")
        config = replace(config, features=tuple(str(f) for f in data["features"]))
    if "loan_type" in data:
        config = replace(config, loan_type=parse_loan_type_flag(str(data["loan_type"])))
    for key, caster in (
        ("damping", float),
        ("tie_eps", float),
        ("confidence_level", float),
        ("min_support", int),
    ):
        if key in data:
            try:
                config = replace(config, **{key: caster(data[key])})
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r} must be a number") from None
    if "duration_rules" in data:
        try:
            rules = tuple(
                DurationRule(pattern=str(r["pattern"]), scale=float(r["scale"]))
                for r in data["duration_rules"]
            )
        except (TypeError, KeyError, ValueError):
            raise ConfigError(
                "duration_rules must be a list of {pattern, scale} objects"
            ) from None
        config = replace(config, duration_rules=rules)
    if "page_constraints" in data:
        pc = data["page_constraints"]
        if pc is not None and not isinstance(pc, dict):
            raise ConfigError("page_constraints must be an object or null")
        config = replace(config, page_constraints=pc)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "features":
            config = replace(config, features=tuple(value))
        elif key == "loan_type":
            config = replace(config, loan_type=parse_loan_type_flag(value))
        elif key in ("damping", "tie_eps", "confidence_level"):
            config = replace(config, **{key: float(value)})
        elif key == "min_support":
            config = replace(config, min_support=int(value))
        else:
            raise ConfigError(f"unknown override {key!r}")
    return _validated(config)
