"""Run configuration: one JSON document, validated against a published schema.

Each block maps onto a dataclass; the schema is derived from the dataclass
fields so the two cannot drift apart.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, replace
from pathlib import Path

import jsonschema

from .lowlevel import LowLevelConfig
from .sim.loop import MpcStackConfig
from .sim.plant import PlantConfig
from .sim.training import TrainingConfig

SCHEMA_VERSION = 1
ENV_VAR = "AMPGUARD_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimBlock:
    seed: int = 1
    days: int = 31
    weather: str = "coldsnap"  # "coldsnap" or a CSV path
    occupants: int = 2
    library_seed: int = 7
    delay_prob: float = 0.0
    delay_seed: int = 0
    ev: str | None = None  # None or "level2"
    legacy_defrost: bool | None = None


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "run"
    output_dir: str = "runs"
    artifacts_dir: str = "artifacts"
    sim: SimBlock = SimBlock()
    mpc: MpcStackConfig = MpcStackConfig()
    lowlevel: LowLevelConfig = LowLevelConfig()
    plant: PlantConfig = PlantConfig()
    training: TrainingConfig = TrainingConfig()

    def to_dict(self) -> dict:
        out = {"schema_version": self.schema_version, "name": self.name, "output_dir": self.output_dir,
               "artifacts_dir": self.artifacts_dir}
        for name, cls in _BLOCKS.items():
            block = getattr(self, name)
            out[name] = {f.name: _jsonable(getattr(block, f.name)) for f in _scalar_fields(cls)}
        return out

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, defaults included."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


_BLOCKS = {"sim": SimBlock, "mpc": MpcStackConfig, "lowlevel": LowLevelConfig, "plant": PlantConfig,
           "training": TrainingConfig}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if hasattr(v, "isoformat"):
        return v.isoformat()
    return v


def _type_schema(tp) -> dict | None:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        parts = [_type_schema(a) for a in typing.get_args(tp)]
        if any(p is None for p in parts):
            return None
        return {"anyOf": parts}
    if tp is type(None):
        return {"type": "null"}
    if tp is bool:
        return {"type": "boolean"}
    if tp is int:
        return {"type": "integer"}
    if tp is float:
        return {"type": "number"}
    if tp is str:
        return {"type": "string"}
    if origin is tuple:
        args = typing.get_args(tp)
        items = [_type_schema(a) for a in args]
        if any(i is None for i in items):
            return None
        return {"type": "array", "prefixItems": items, "minItems": len(items), "maxItems": len(items)}
    if getattr(tp, "__name__", "") == "datetime":
        return {"type": "string", "format": "date-time"}
    return None


def _scalar_fields(cls) -> list[dataclasses.Field]:
    hints = typing.get_type_hints(cls)
    return [f for f in dataclasses.fields(cls) if _type_schema(hints[f.name]) is not None]


def _block_schema(cls) -> dict:
    hints = typing.get_type_hints(cls)
    props = {f.name: _type_schema(hints[f.name]) for f in _scalar_fields(cls)}
    return {"type": "object", "properties": props, "additionalProperties": False}


def schema() -> dict:
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "ampguard run configuration",
        "type": "object",
        "properties": {
            "schema_version": {"const": SCHEMA_VERSION},
            "name": {"type": "string"},
            "output_dir": {"type": "string"},
            "artifacts_dir": {"type": "string"},
            **{name: _block_schema(cls) for name, cls in _BLOCKS.items()},
        },
        "additionalProperties": False,
    }


def _build_block(cls, base, data: dict):
    hints = typing.get_type_hints(cls)
    kw = {}
    for k, v in data.items():
        tp = hints[k]
        if isinstance(v, list):
            v = tuple(v)
        elif isinstance(v, str) and getattr(tp, "__name__", "") == "datetime":
            from datetime import datetime

            v = datetime.fromisoformat(v)
        kw[k] = v
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    try:
        jsonschema.validate(doc, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None
    base = RunConfig()
    blocks = {name: _build_block(cls, getattr(base, name), doc.get(name, {})) for name, cls in _BLOCKS.items()}
    top = {k: doc[k] for k in ("schema_version", "name", "output_dir", "artifacts_dir") if k in doc}
    return replace(base, **top, **blocks)


def load(path: str | Path | None = None) -> RunConfig:
    """Read ``path``, else the file named by AMPGUARD_CONFIG, else defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}: {exc.msg}") from None
    return from_dict(doc)
