"""JSON run configuration with strict keys and dotted-path overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .attacks import AttackConfig
from .autodiff import ContractError
from .classifier import ClassifierConfig
from .data import SyntheticCorpusSpec
from .experiments import GAMMA_GRID, STEPS_GRID
from .flow import TrainConfig


@dataclass
class PurifierSection:
    gamma: float = 0.5
    xi: float = 1e-5
    steps: int = 10


@dataclass
class EvalSection:
    num_eval: int = 0  # 0 means the whole test split
    gammas: list = field(default_factory=lambda: list(GAMMA_GRID))
    steps: list = field(default_factory=lambda: list(STEPS_GRID))
    psd_bins: int = 16


@dataclass
class RunConfig:
    data: SyntheticCorpusSpec = field(default_factory=SyntheticCorpusSpec)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    purifier: PurifierSection = field(default_factory=PurifierSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _merge(obj, data: dict, path: str):
    if not isinstance(data, dict):
        raise ContractError(f"config section {path or '<root>'} must be an object")
    known = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ContractError(f"unknown config key {where!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, where)
        else:
            setattr(obj, key, _coerce(current, value, where))


def _coerce(current, value, where: str):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ContractError(f"{where} expects a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ContractError(f"{where} expects an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ContractError(f"{where} expects a number, got {value!r}")
        return float(value)
    if isinstance(current, list) and not isinstance(value, list):
        raise ContractError(f"{where} expects a list, got {value!r}")
    if isinstance(current, str) and not isinstance(value, str):
        raise ContractError(f"{where} expects a string, got {value!r}")
    return value


def _revalidate(cfg: RunConfig) -> RunConfig:
    # rebuild dataclasses whose __post_init__ validates fields
    cfg.train.loss = type(cfg.train.loss)(**dataclasses.asdict(cfg.train.loss))
    return cfg


def parse_override(text: str) -> tuple[str, Any]:
    """``a.b.c=value`` with ``value`` parsed as JSON when possible."""
    if "=" not in text:
        raise ContractError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def nest(key: str, value) -> dict:
    out: dict = {}
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then the JSON file, then dotted overrides (flags win)."""
    cfg = RunConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ContractError(f"config {path} is not valid JSON: {exc}") from exc
        _merge(cfg, data, "")
    for key, value in (overrides or {}).items():
        if value is not None:
            _merge(cfg, nest(key, value), "")
    return _revalidate(cfg)


def write_resolved(cfg: RunConfig, out_dir: str | Path, command: str, seed: int | None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "seed": seed, "version": __version__, "config": cfg.to_dict()}
    (out_dir / "config.resolved.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    (out_dir / "VERSION").write_text(__version__ + "\n")
