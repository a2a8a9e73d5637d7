"""Run configuration: one nested dataclass tree, JSON on disk, CLI overrides on top."""
import dataclasses
import json
import os
from dataclasses import dataclass, field

from .dqn import NetConfig, TrainConfig
from .env import EpisodeConfig, RenderConfig
from .render import FacePalette
from .scene import JitterSpec, SceneConfig

CONFIG_ENV = "BOXREFINE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    train_scene_seed: int = 0
    train_scenes: int = 24
    probe_scene_seed: int = 100_000
    probe_episodes: int = 40
    probe_jitter_seed: int = 7


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    pretrain: bool = True
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    net: NetConfig = field(default_factory=NetConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    jitter: JitterSpec = field(default_factory=JitterSpec)
    scenes: SceneConfig = field(default_factory=SceneConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self):
        return to_dict(self)

    def compat(self):
        """Settings a checkpoint has to match to be reused for refinement."""
        return {"net": to_dict(self.net), "render": to_dict(self.render),
                "action_frame": self.episode.action_frame}


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [to_dict(v) for v in obj]
    return obj


def _coerce(value, default, path):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return from_dict(type(default), value, path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(value)
    if isinstance(default, int) and not isinstance(value, bool) and isinstance(value, (int, float)):
        if int(value) != value:
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, str) and isinstance(value, str):
        return value
    raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")


def from_dict(cls, data, path=""):
    base = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], getattr(base, f.name), sub)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from None


def load_config(path=None):
    """Load a JSON config; ``path`` falls back to ``$BOXREFINE_CONFIG``, then defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(RunConfig, data)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def override(cfg, **paths):
    """Replace dotted fields, e.g. ``override(cfg, **{"episode.delta": 0.02})``."""
    d = cfg.to_dict()
    for dotted, value in paths.items():
        node = d
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        if leaf not in node:
            raise ConfigError(f"{dotted}: unknown field")
        node[leaf] = value
    return from_dict(RunConfig, d)


__all__ = ["RunConfig", "DataConfig", "ConfigError", "load_config", "dump_config", "override",
           "from_dict", "to_dict", "FacePalette", "CONFIG_ENV"]
