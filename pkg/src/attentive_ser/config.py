"""Flat key = value run configuration shared by every CLI command.

Keys are the union of the DSP, model and trainer settings plus paths; n_mels and
target_frames feed both the feature extractor and the model.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import DspConfig
from .model import ModelConfig
from .train import TrainConfig

CONFIG_FORMAT_VERSION = 1
_SECTION = "run"


@dataclass
class RunConfig:
    audio_dir: str = ""
    manifest: str = "manifest.csv"
    votes: str = "votes.csv"
    labels: str = ""
    predictions: str = ""
    electoral: str = ""
    out: str = "out"
    weighting: str = "duration"
    split_policy: str = "plurality"
    dsp: DspConfig = field(default_factory=DspConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def labels_path(self) -> Path:
        return Path(self.labels) if self.labels else self.out_dir / "annotate" / "labels.csv"

    def predictions_path(self) -> Path:
        return Path(self.predictions) if self.predictions else self.out_dir / "train" / "predictions.csv"


_PATH_KEYS = ("audio_dir", "manifest", "votes", "labels", "predictions", "electoral", "out",
              "weighting", "split_policy")


def _parse(value: str, like):
    text = value.strip()
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(int(p) for p in text.replace(" ", "").split(",") if p)
    return text


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _sections(cfg: RunConfig):
    return {"dsp": cfg.dsp, "model": cfg.model, "train": cfg.train}


def known_keys() -> set:
    keys = set(_PATH_KEYS) | {"format_version"}
    for obj in _sections(RunConfig()).values():
        keys |= {f.name for f in dataclasses.fields(obj)}
    return keys


def from_mapping(values: dict, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    unknown = set(values) - known_keys()
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    top = {k: _parse(values[k], getattr(base, k)) for k in _PATH_KEYS if k in values}
    parts = {}
    for name, obj in _sections(base).items():
        updates = {f.name: _parse(values[f.name], getattr(obj, f.name))
                   for f in dataclasses.fields(obj) if f.name in values}
        parts[name] = dataclasses.replace(obj, **updates)
    cfg = dataclasses.replace(base, **top, **parts)
    cfg.dsp.validate()
    cfg.model.validate()
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        text = Path(path).read_text()
        if not text.lstrip().startswith("["):
            text = f"[{_SECTION}]\n" + text
        parser.read_string(text, source=str(path))
        for section in parser.sections():
            values.update(parser[section])
        version = values.get("format_version")
        if version is not None and int(version) != CONFIG_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported config format_version {version}")
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(values)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"format_version = {CONFIG_FORMAT_VERSION}", "", "# paths and analysis"]
    lines += [f"{k} = {_format(getattr(cfg, k))}" for k in _PATH_KEYS]
    for name, obj in _sections(cfg).items():
        lines += ["", f"# {name}"]
        lines += [f"{f.name} = {_format(getattr(obj, f.name))}" for f in dataclasses.fields(obj)
                  if not (name == "model" and f.name in ("n_mels", "target_frames"))]
    return "\n".join(lines) + "\n"
