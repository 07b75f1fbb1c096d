"""Run configuration: presets, JSON loading, flag overrides.

A run is described by one JSON document with four sections (model,
pretrain, finetune, sim) plus a root seed. The ``paper`` preset carries
the full-scale defaults; ``tiny`` is the desk-scale preset every test
and acceptance run uses (8 patches, 16-dim embeddings, 2+1 layers, and
step sizes rescaled so 50 epochs on a few hundred samples actually
converge). Precedence: preset < config file < CLI flags.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .finetune import FinetuneSchedule
from .model import ModelConfig
from .pdw import DEFAULT_RATIO, DEFAULT_TEST_TOTAL, NoiseParams
from .pretraining import PretrainHyper

PRESETS = ("paper", "tiny")


@dataclass(frozen=True)
class FinetuneConfig:
    schedule: FinetuneSchedule = FinetuneSchedule()
    lora_rank: int = 8
    batch_size: int = 256
    weight_decay: float = 0.01
    pretrain_scope: str = "pooled"  # pooled | per_mode


@dataclass(frozen=True)
class SimConfig:
    ratio: tuple = DEFAULT_RATIO
    test_total: int = DEFAULT_TEST_TOTAL
    pool_size: int = 2000
    n_pulses: int = 512
    noise: NoiseParams = NoiseParams()


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = ModelConfig()
    pretrain: PretrainHyper = field(default_factory=PretrainHyper)
    finetune: FinetuneConfig = FinetuneConfig()
    sim: SimConfig = SimConfig()
    seed: int = 0
    preset: str = "paper"


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(n_patches=8, embed_dim=16, encoder_layers=2, decoder_layers=1,
                heads=2, patch_len=64)
    base.update(overrides)
    return ModelConfig(**base)


def preset_config(name: str) -> RunConfig:
    if name == "paper":
        return RunConfig()
    if name == "tiny":
        return RunConfig(
            model=tiny_model_config(),
            pretrain=PretrainHyper(epochs=50, batch_size=32, lr=3e-3),
            finetune=FinetuneConfig(
                schedule=FinetuneSchedule(base_lr=5e-3),
                batch_size=32,
            ),
            sim=SimConfig(pool_size=200),
            preset="tiny",
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


def _asdict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _asdict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    return _asdict(cfg)


_SECTION_TYPES = {
    "model": ModelConfig,
    "pretrain": PretrainHyper,
    "finetune": FinetuneConfig,
    "sim": SimConfig,
}
_NESTED_TYPES = {
    ("finetune", "schedule"): FinetuneSchedule,
    ("sim", "noise"): NoiseParams,
}


def _build_section(section: str, cls, current, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            kwargs[f.name] = getattr(current, f.name)
            continue
        value = data[f.name]
        nested = _NESTED_TYPES.get((section, f.name))
        if nested is not None:
            kwargs[f.name] = _build_section(f"{section}.{f.name}", nested,
                                            getattr(current, f.name), value)
        elif isinstance(value, list):
            kwargs[f.name] = tuple(value)
        else:
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def merge_config(base: RunConfig, data: dict) -> RunConfig:
    """Overlay a (possibly partial) JSON document onto ``base``."""
    unknown = set(data) - set(_SECTION_TYPES) - {"seed", "preset"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        current = getattr(base, name)
        sections[name] = (
            _build_section(name, cls, current, data[name]) if name in data else current
        )
    return RunConfig(
        seed=int(data.get("seed", base.seed)),
        preset=base.preset,
        **sections,
    )


def load_config(path: str | None, preset: str = "paper") -> RunConfig:
    cfg = preset_config(preset)
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if "preset" in data and data["preset"] != preset:
        cfg = preset_config(data["preset"])
    return merge_config(cfg, data)
