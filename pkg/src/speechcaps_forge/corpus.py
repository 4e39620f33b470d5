"""Single-talker utterance manifests: the record store every stage reads.

Manifests are JSONL, one utterance object per line. Loading validates the
schema, resolves audio paths relative to the manifest file, and fills in
duration/sample-rate fields from the WAV headers when absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .audio import Waveform, read_wav, read_wav_info
from .errors import DuplicateId, MissingAudio, SchemaError

GENDERS = ("male", "female")
LEVELS = ("low", "medium", "high")

_REQUIRED_STR = ("id", "speaker_id", "gender", "emotion", "transcript", "audio_path")
_OPTIONAL_LABELS = ("pitch_label", "speed_label", "energy_label")


@dataclass
class UtteranceRecord:
    """One single-talker utterance plus its metadata."""

    id: str
    speaker_id: str
    gender: str
    emotion: str
    transcript: str
    audio_path: str
    duration_s: float
    sample_rate_hz: int
    pitch_label: str | None = None
    speed_label: str | None = None
    energy_label: str | None = None
    style_prompt: str | None = None

    def labels(self) -> dict[str, str | None]:
        return {
            "gender": self.gender,
            "emotion": self.emotion,
            "pitch": self.pitch_label,
            "speed": self.speed_label,
            "energy": self.energy_label,
        }

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "speaker_id": self.speaker_id,
            "gender": self.gender,
            "emotion": self.emotion,
            "transcript": self.transcript,
            "audio_path": self.audio_path,
            "duration_s": self.duration_s,
            "sample_rate_hz": self.sample_rate_hz,
        }
        for key in (*_OPTIONAL_LABELS, "style_prompt"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


@dataclass
class Manifest:
    """Ordered utterance records; read-only once loaded."""

    records: list[UtteranceRecord]
    source_tag: str = ""
    root: Path = field(default_factory=Path)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self, utterance_id: str) -> UtteranceRecord:
        return self._index()[utterance_id]

    def _index(self) -> dict[str, UtteranceRecord]:
        if not hasattr(self, "_by_id"):
            self._by_id = {r.id: r for r in self.records}
        return self._by_id

    def speaker_ids(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})

    def resolve_audio(self, record: UtteranceRecord) -> Path:
        p = Path(record.audio_path)
        return p if p.is_absolute() else self.root / p


def _parse_record(obj: dict, line_no: int, root: Path) -> UtteranceRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"line {line_no}: record is not an object")
    for key in _REQUIRED_STR:
        if key not in obj:
            raise SchemaError(f"line {line_no}: missing field '{key}'")
        if not isinstance(obj[key], str) or not obj[key]:
            raise SchemaError(f"line {line_no}: field '{key}' must be a non-empty string")
    if obj["gender"] not in GENDERS:
        raise SchemaError(
            f"line {line_no}: gender '{obj['gender']}' not one of {list(GENDERS)}"
        )
    for key in _OPTIONAL_LABELS:
        if key in obj and obj[key] is not None and obj[key] not in LEVELS:
            raise SchemaError(
                f"line {line_no}: {key} '{obj[key]}' not one of {list(LEVELS)}"
            )
    style = obj.get("style_prompt")
    if style is not None and not isinstance(style, str):
        raise SchemaError(f"line {line_no}: style_prompt must be a string")

    audio = Path(obj["audio_path"])
    resolved = audio if audio.is_absolute() else root / audio
    if not resolved.is_file():
        raise MissingAudio(f"line {line_no}: audio file not found: {resolved}")
    info = read_wav_info(resolved)

    duration = obj.get("duration_s")
    if duration is None:
        duration = info.duration_s
    elif not isinstance(duration, (int, float)) or duration <= 0:
        raise SchemaError(f"line {line_no}: duration_s must be a positive number")
    elif abs(duration - info.duration_s) > 1e-3:
        raise SchemaError(
            f"line {line_no}: duration_s {duration} disagrees with audio "
            f"({info.duration_s:.6f}s) by more than 1 ms"
        )

    rate = obj.get("sample_rate_hz")
    if rate is None:
        rate = info.sample_rate_hz
    elif not isinstance(rate, int) or rate <= 0:
        raise SchemaError(f"line {line_no}: sample_rate_hz must be a positive integer")
    elif rate != info.sample_rate_hz:
        raise SchemaError(
            f"line {line_no}: sample_rate_hz {rate} disagrees with audio "
            f"({info.sample_rate_hz})"
        )

    return UtteranceRecord(
        id=obj["id"],
        speaker_id=obj["speaker_id"],
        gender=obj["gender"],
        emotion=obj["emotion"],
        transcript=obj["transcript"],
        audio_path=obj["audio_path"],
        duration_s=float(duration),
        sample_rate_hz=rate,
        pitch_label=obj.get("pitch_label"),
        speed_label=obj.get("speed_label"),
        energy_label=obj.get("energy_label"),
        style_prompt=style,
    )


def load_manifest(path: str | Path, source_tag: str | None = None) -> Manifest:
    """Load and validate a JSONL utterance manifest.

    Audio paths are resolved relative to the manifest's directory; every
    referenced file must exist and parse as PCM WAV. Raises SchemaError,
    MissingAudio, or DuplicateId with the offending line number.
    """
    path = Path(path)
    root = path.parent
    records: list[UtteranceRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            record = _parse_record(obj, line_no, root)
            if record.id in seen:
                raise DuplicateId(f"line {line_no}: duplicate id '{record.id}'")
            seen.add(record.id)
            records.append(record)
    return Manifest(records=records, source_tag=source_tag or path.stem, root=root)


def save_manifest(manifest: Manifest | Iterable[UtteranceRecord], path: str | Path) -> None:
    """Serialize records back to JSONL, one object per line."""
    records = manifest.records if isinstance(manifest, Manifest) else list(manifest)
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def load_audio(record: UtteranceRecord, root: str | Path | None = None) -> Waveform:
    """Load a record's referenced WAV as mono float samples in [-1, 1]."""
    p = Path(record.audio_path)
    if not p.is_absolute() and root is not None:
        p = Path(root) / p
    return read_wav(p)
