"""Declarative run configuration: YAML file, env-var overrides, validation.

CI and local runs differ only in endpoint URLs, so those (and the API key)
can be supplied via SPRAG_EMBED_URL, SPRAG_GEN_URL and SPRAG_API_KEY.
Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .corpus import DEFAULT_SIZE_OVERRIDES
from .generator import DEFAULT_GENERATOR_MODEL, EXPERIMENT_TEMPERATURES
from .retriever import BAAI_MODEL

ENV_EMBED_URL = "SPRAG_EMBED_URL"
ENV_GEN_URL = "SPRAG_GEN_URL"
ENV_API_KEY = "SPRAG_API_KEY"


class ConfigError(ValueError):
    """The configuration file is malformed or contains unknown keys."""


@dataclass
class EmbeddingSettings:
    url: str = ""
    model_id: str = BAAI_MODEL
    stub: bool = False
    stub_dims: int = 64


@dataclass
class GeneratorSettings:
    url: str = ""
    model_id: str = DEFAULT_GENERATOR_MODEL
    stub: bool = False


@dataclass
class GridSettings:
    ks: list[int] = field(default_factory=lambda: [2, 3, 4])
    temperatures: list[float] = field(default_factory=lambda: list(EXPERIMENT_TEMPERATURES))


@dataclass
class RunConfig:
    dataset_dir: Path = Path("data/corpora")
    results_dir: Path = Path("results")
    cache_dir: Path = Path(".cache/embeddings")
    fixture_path: Path | None = None
    embedding: EmbeddingSettings = field(default_factory=EmbeddingSettings)
    generator: GeneratorSettings = field(default_factory=GeneratorSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    size_overrides: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_SIZE_OVERRIDES))
    api_key: str = ""
    parallelism: int = 4
    split_ratio: float = 0.8

    def validate(self) -> None:
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must be in (0, 1)")
        if not self.grid.ks or not self.grid.temperatures:
            raise ConfigError("grid must list at least one k and one temperature")


def _build(cls, data: Mapping[str, Any], context: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        if name in ("dataset_dir", "results_dir", "cache_dir", "fixture_path") and value is not None:
            value = Path(value)
        elif name == "embedding":
            value = _build(EmbeddingSettings, value, "embedding")
        elif name == "generator":
            value = _build(GeneratorSettings, value, "generator")
        elif name == "grid":
            value = _build(GridSettings, value, "grid")
        kwargs[name] = value
    return cls(**kwargs)


def load_config(path: Path | str | None = None, env: Mapping[str, str] | None = None) -> RunConfig:
    """Load a YAML config (or defaults) and apply environment overrides."""
    env = os.environ if env is None else env
    if path is None:
        config = RunConfig()
    else:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        config = _build(RunConfig, raw, "config")

    if env.get(ENV_EMBED_URL):
        config.embedding.url = env[ENV_EMBED_URL]
    if env.get(ENV_GEN_URL):
        config.generator.url = env[ENV_GEN_URL]
    if env.get(ENV_API_KEY):
        config.api_key = env[ENV_API_KEY]
    config.validate()
    return config
