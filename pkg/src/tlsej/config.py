"""Run configuration: one YAML tree covering data paths, fixture and training."""

from __future__ import annotations

from dataclasses import dataclass, field

from .fixture import FixtureConfig
from .schema import describe, dump_yaml, load_yaml
from .trainer import TrainConfig


@dataclass
class PathsConfig:
    train_manifest: str | None = None
    dev_manifest: str | None = None
    eval_manifest: str | None = None
    protocol: str | None = None
    noise_train: str | None = None
    noise_eval: str | None = None
    test_sets: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    fixture: FixtureConfig = field(default_factory=FixtureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def load_config(path=None):
    """Defaults when ``path`` is None; otherwise a strictly validated tree."""
    if path is None:
        return RunConfig()
    return load_yaml(RunConfig, path)


def dump_config(config, path=None):
    return dump_yaml(config, path)


def schema():
    return describe(RunConfig)
