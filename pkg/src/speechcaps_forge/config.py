"""Run configuration: one JSON file, overridable per stage from the CLI."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .mixer import MixPolicy
from .promptgen import QAPolicy


@dataclass(frozen=True)
class JudgeSettings:
    backend: str = "rule"
    endpoint_url: str = ""
    model: str = ""
    api_key_env: str = "SPEECHCAPS_API_KEY"
    concurrency: int = 8
    max_failure_fraction: float = 0.05
    synonyms_path: str | None = None
    audit_path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    mix: MixPolicy = field(default_factory=MixPolicy)
    mix_workers: int = 1
    band_width: float = 0.15
    per_speaker_bands: bool = False
    lexicon_path: str | None = None
    templates_path: str | None = None
    qa: QAPolicy = field(default_factory=QAPolicy)
    judge: JudgeSettings = field(default_factory=JudgeSettings)
    caption_backend_quotas: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        try:
            if "mix" in obj:
                mix = dict(obj["mix"])
                for key in ("speaker_counts", "speaker_count_weights", "gap_bounds_s", "overlap_bounds_s"):
                    if key in mix:
                        mix[key] = tuple(mix[key])
                obj["mix"] = MixPolicy(**mix)
            if "qa" in obj:
                qa = dict(obj["qa"])
                if "superlative_extremes" in qa:
                    qa["superlative_extremes"] = tuple(qa["superlative_extremes"])
                obj["qa"] = QAPolicy(**qa)
            if "judge" in obj:
                obj["judge"] = JudgeSettings(**obj["judge"])
            config = cls(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad configuration: {exc}") from exc
        config.mix.validate()
        return config


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    return RunConfig.from_dict(obj)


def fingerprint(config: RunConfig, stage_params: dict | None = None) -> str:
    """Stable hash over the config plus the stage's own parameters."""
    payload = {"config": config.to_dict(), "params": stage_params or {}}
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
