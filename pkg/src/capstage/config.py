"""Run configuration: one JSON document, CAPSTAGE_* environment overrides,
then command-line flags, in increasing precedence.

The `profile` field selects a base set of model widths: "full" keeps the
full-scale defaults (512-D Vision-LSTM, 128-D Audio-LSTM, 2048/1024/128
inputs), "small" shrinks every trainable width for desk-scale runs while
leaving the input feature geometry untouched. Explicit `model` entries
override the profile either way.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .corpus import TRACKS, SynthConfig
from .model import ModelConfig
from .training import StageConfig

ENV_PREFIX = "CAPSTAGE_"

# Desk-scale widths: the encoder/decoder shrink, feature inputs stay real-sized.
SMALL_PROFILE = {
    "e_app": 64,
    "e_mot": 64,
    "e_aud": 64,
    "h_vis": 128,
    "h_aud": 64,
    "e_word": 64,
    "e_topic": 32,
    "h_att": 128,
    "h_lang": 128,
    "h_score": 64,
    "max_len": 18,
}
PROFILES = {"small": SMALL_PROFILE, "full": {}}


@dataclass
class RunConfig:
    dataset_dir: str = "data"
    out_dir: str = "out"
    seed: int = 0
    track: str = "english"
    profile: str = "small"
    model: dict = field(default_factory=dict)
    stages: StageConfig = field(default_factory=StageConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> "RunConfig":
        if not isinstance(self.seed, int):
            raise ValueError(f"seed must be an integer, got {self.seed!r}")
        if self.track not in TRACKS:
            raise ValueError(f"track must be one of {TRACKS}, got {self.track!r}")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {sorted(PROFILES)}, got {self.profile!r}")
        unknown = set(self.model) - set(ModelConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model override keys {sorted(unknown)}")
        self.stages.validate()
        self.synth.validate()
        return self

    def model_config(self, vocab_size: int, n_topics: int) -> ModelConfig:
        merged = {**PROFILES[self.profile], **self.model}
        return ModelConfig(vocab_size=vocab_size, n_topics=n_topics, **merged).validate()

    def to_dict(self) -> dict:
        obj = asdict(self)
        obj["synth"]["tracks"] = list(self.synth.tracks)
        return obj

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown run config keys {sorted(unknown)}")
        if "stages" in obj:
            obj["stages"] = StageConfig.from_dict(obj["stages"])
        if "synth" in obj:
            obj["synth"] = SynthConfig.from_dict(obj["synth"])
        return cls(**obj).validate()


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(env=None) -> dict:
    """Collect CAPSTAGE_* variables into a nested override dict.

    CAPSTAGE_SEED=3 sets seed; double underscores descend into sections,
    e.g. CAPSTAGE_STAGES__MU=8 or CAPSTAGE_MODEL__MAX_LEN=20. Values parse
    as JSON when possible, otherwise stay strings.
    """
    env = os.environ if env is None else env
    out: dict = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX) :].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_env_value(env[key])
    return out


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = _deep_merge(merged[k], v)
        else:
            merged[k] = v
    return merged


def load_run_config(path: Path | None = None, env=None, flag_overrides: dict | None = None) -> RunConfig:
    """Resolve the effective run config: defaults < file < env < flags."""
    obj: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        loaded = json.loads(text)
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        obj = loaded
    obj = _deep_merge(obj, env_overrides(env))
    if flag_overrides:
        obj = _deep_merge(obj, {k: v for k, v in flag_overrides.items() if v is not None})
    return RunConfig.from_dict(obj)
