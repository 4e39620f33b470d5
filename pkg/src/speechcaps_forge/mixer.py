"""Multi-talker clip planning and rendering.

A clip takes 2 or 3 utterances from distinct speakers and chains them with
per-boundary scenarios: either a silence gap (uniform [0, 1] s) or an
overlap (uniform [0.8, 2.4] s, clamped so neither neighbor is swallowed).
Planning is a pure function of (pool, seed, policy); rendering resamples
sources to the target rate, sums overlaps, and rescales the whole clip if
the mixed peak exceeds 0.99.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .audio import Waveform, resample_linear, write_wav_pcm16
from .corpus import Manifest, UtteranceRecord, load_audio
from .errors import ConfigError, PoolTooSmall, UtteranceTooShort

log = logging.getLogger(__name__)

GAP_BOUNDS_S = (0.0, 1.0)
OVERLAP_BOUNDS_S = (0.8, 2.4)
PEAK_CEILING = 0.99


@dataclass(frozen=True)
class MixPolicy:
    """Sampling and rendering knobs for clip generation."""

    speaker_counts: tuple[int, ...] = (2, 3)
    speaker_count_weights: tuple[float, ...] = (0.5, 0.5)
    gap_probability: float = 0.5
    gap_bounds_s: tuple[float, float] = GAP_BOUNDS_S
    overlap_bounds_s: tuple[float, float] = OVERLAP_BOUNDS_S
    overlap_guard_s: float = 0.05
    max_utterance_s: float = 30.0
    target_rate_hz: int = 16000
    max_retries: int = 10
    allow_custom_bounds: bool = False

    def validate(self) -> None:
        if len(self.speaker_counts) != len(self.speaker_count_weights):
            raise ConfigError("speaker_counts and speaker_count_weights disagree in length")
        if any(n < 2 for n in self.speaker_counts):
            raise ConfigError("clips need at least 2 speakers")
        if not 0.0 <= self.gap_probability <= 1.0:
            raise ConfigError("gap_probability must be in [0, 1]")
        for lo, hi in (self.gap_bounds_s, self.overlap_bounds_s):
            if lo > hi:
                raise ConfigError("bounds must be ordered (low <= high)")
        if not self.allow_custom_bounds:
            if not (GAP_BOUNDS_S[0] <= self.gap_bounds_s[0] <= self.gap_bounds_s[1] <= GAP_BOUNDS_S[1]):
                raise ConfigError(
                    f"gap bounds {self.gap_bounds_s} outside {GAP_BOUNDS_S}; "
                    "pass allow_custom_bounds to override"
                )
            if not (
                OVERLAP_BOUNDS_S[0]
                <= self.overlap_bounds_s[0]
                <= self.overlap_bounds_s[1]
                <= OVERLAP_BOUNDS_S[1]
            ):
                raise ConfigError(
                    f"overlap bounds {self.overlap_bounds_s} outside {OVERLAP_BOUNDS_S}; "
                    "pass allow_custom_bounds to override"
                )

    def uses_custom_bounds(self) -> bool:
        return self.gap_bounds_s != GAP_BOUNDS_S or self.overlap_bounds_s != OVERLAP_BOUNDS_S


@dataclass(frozen=True)
class SpeakerSegment:
    """One utterance placed on the clip timeline."""

    utterance_id: str
    speaker_id: str
    order_index: int
    gender: str
    emotion: str
    pitch_label: str | None
    speed_label: str | None
    energy_label: str | None
    start_s: float
    end_s: float

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "speaker_id": self.speaker_id,
            "order_index": self.order_index,
            "gender": self.gender,
            "emotion": self.emotion,
            "pitch_label": self.pitch_label,
            "speed_label": self.speed_label,
            "energy_label": self.energy_label,
            "start_s": self.start_s,
            "end_s": self.end_s,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SpeakerSegment":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class ClipPlan:
    """Planned timeline for one clip, before any audio is touched."""

    clip_id: str
    seed: int
    segments: tuple[SpeakerSegment, ...]
    boundary_modes: tuple[str, ...]
    boundary_durations_s: tuple[float, ...]
    total_duration_s: float

    def to_metadata(self, extras: dict | None = None) -> "ClipMetadata":
        return ClipMetadata(
            clip_id=self.clip_id,
            seed=self.seed,
            segments=self.segments,
            boundary_modes=self.boundary_modes,
            boundary_durations_s=self.boundary_durations_s,
            total_duration_s=self.total_duration_s,
            extras=dict(extras or {}),
        )


@dataclass(frozen=True)
class ClipMetadata:
    """Emitted per-clip record: segments, boundaries, and render extras."""

    clip_id: str
    seed: int
    segments: tuple[SpeakerSegment, ...]
    boundary_modes: tuple[str, ...]
    boundary_durations_s: tuple[float, ...]
    total_duration_s: float
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "seed": self.seed,
            "segments": [s.to_dict() for s in self.segments],
            "boundary_modes": list(self.boundary_modes),
            "boundary_durations_s": list(self.boundary_durations_s),
            "total_duration_s": self.total_duration_s,
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ClipMetadata":
        return cls(
            clip_id=obj["clip_id"],
            seed=obj["seed"],
            segments=tuple(SpeakerSegment.from_dict(s) for s in obj["segments"]),
            boundary_modes=tuple(obj["boundary_modes"]),
            boundary_durations_s=tuple(obj["boundary_durations_s"]),
            total_duration_s=obj["total_duration_s"],
            extras=obj.get("extras", {}),
        )

    def validate(self, tol: float = 1e-6) -> None:
        """Check the timing invariants; raises ValueError on violation."""
        n = len(self.segments)
        if n not in (2, 3):
            raise ValueError(f"{self.clip_id}: expected 2 or 3 segments, got {n}")
        if len(self.boundary_modes) != n - 1 or len(self.boundary_durations_s) != n - 1:
            raise ValueError(f"{self.clip_id}: boundary lists must have length {n - 1}")
        if abs(self.segments[0].start_s) > tol:
            raise ValueError(f"{self.clip_id}: first segment must start at 0")
        for i, (mode, dur) in enumerate(zip(self.boundary_modes, self.boundary_durations_s)):
            a, b = self.segments[i], self.segments[i + 1]
            if mode == "gap":
                actual = b.start_s - a.end_s
            elif mode == "overlap":
                actual = a.end_s - b.start_s
            else:
                raise ValueError(f"{self.clip_id}: unknown boundary mode '{mode}'")
            if abs(actual - dur) > tol:
                raise ValueError(
                    f"{self.clip_id}: boundary {i} duration {dur} does not match layout {actual}"
                )
            if b.start_s < -tol:
                raise ValueError(f"{self.clip_id}: segment {i + 1} starts before 0")
        if abs(self.total_duration_s - max(s.end_s for s in self.segments)) > tol:
            raise ValueError(f"{self.clip_id}: total_duration_s is not the max end time")


def compute_segment_times(
    durations: Sequence[float], boundaries: Sequence[tuple[str, float]]
) -> list[tuple[float, float]]:
    """Lay segments on the timeline from durations and (mode, duration) boundaries.

    The first segment starts at 0; a gap pushes the next start after the
    previous end, an overlap pulls it earlier.
    """
    if len(boundaries) != len(durations) - 1:
        raise ValueError("need exactly one boundary between consecutive segments")
    spans = [(0.0, durations[0])]
    for dur, (mode, bdur) in zip(durations[1:], boundaries):
        prev_end = spans[-1][1]
        if mode == "gap":
            start = prev_end + bdur
        elif mode == "overlap":
            start = prev_end - bdur
        else:
            raise ValueError(f"unknown boundary mode '{mode}'")
        spans.append((start, start + dur))
    return spans


def clip_seed(master_seed: int, index: int, attempt: int = 0) -> int:
    """Stable per-clip seed so generation parallelizes without coordination."""
    digest = hashlib.blake2b(
        f"{master_seed}:{index}:{attempt}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def _eligible_by_speaker(pool: Manifest, policy: MixPolicy) -> dict[str, list[UtteranceRecord]]:
    groups: dict[str, list[UtteranceRecord]] = {}
    for record in pool:
        if record.duration_s < policy.max_utterance_s:
            groups.setdefault(record.speaker_id, []).append(record)
    for records in groups.values():
        records.sort(key=lambda r: r.id)
    return groups


def plan_clip(pool: Manifest, rng_seed: int, policy: MixPolicy | None = None) -> ClipPlan:
    """Sample one clip layout: speaker count, utterances, boundaries, timing.

    Deterministic for a given (pool, rng_seed, policy). Raises PoolTooSmall
    when fewer than 3 distinct speakers are eligible and UtteranceTooShort
    when an overlap cannot reach its lower bound even after clamping.
    """
    policy = policy or MixPolicy()
    policy.validate()
    groups = _eligible_by_speaker(pool, policy)
    if len(groups) < 3:
        raise PoolTooSmall(
            f"need >= 3 distinct eligible speakers, found {len(groups)}"
        )
    rng = random.Random(rng_seed)
    n = rng.choices(policy.speaker_counts, weights=policy.speaker_count_weights, k=1)[0]
    speakers = rng.sample(sorted(groups), k=n)
    records = [rng.choice(groups[s]) for s in speakers]

    modes: list[str] = []
    durations: list[float] = []
    for i in range(n - 1):
        if rng.random() < policy.gap_probability:
            modes.append("gap")
            durations.append(rng.uniform(*policy.gap_bounds_s))
        else:
            limit = min(records[i].duration_s, records[i + 1].duration_s) - policy.overlap_guard_s
            if limit < policy.overlap_bounds_s[0]:
                raise UtteranceTooShort(
                    f"overlap lower bound {policy.overlap_bounds_s[0]}s unreachable: "
                    f"neighbors allow at most {limit:.3f}s"
                )
            modes.append("overlap")
            durations.append(min(rng.uniform(*policy.overlap_bounds_s), limit))

    spans = compute_segment_times([r.duration_s for r in records], list(zip(modes, durations)))
    segments = tuple(
        SpeakerSegment(
            utterance_id=r.id,
            speaker_id=r.speaker_id,
            order_index=i + 1,
            gender=r.gender,
            emotion=r.emotion,
            pitch_label=r.pitch_label,
            speed_label=r.speed_label,
            energy_label=r.energy_label,
            start_s=start,
            end_s=end,
        )
        for i, (r, (start, end)) in enumerate(zip(records, spans))
    )
    return ClipPlan(
        clip_id=f"clip_{rng_seed:016x}",
        seed=rng_seed,
        segments=segments,
        boundary_modes=tuple(modes),
        boundary_durations_s=tuple(durations),
        total_duration_s=max(end for _, end in spans),
    )


def render_clip(plan: ClipPlan, audio_source: Manifest, policy: MixPolicy | None = None) -> tuple[Waveform, ClipMetadata]:
    """Mix the planned clip: resample, place, sum overlaps, rescale peaks.

    Sources land at round(start_s * rate) samples; regions outside every
    segment stay exactly zero. If the mixed peak exceeds 0.99 the whole
    clip is scaled down and the factor recorded in extras["scale"].
    """
    policy = policy or MixPolicy()
    rate = policy.target_rate_hz
    placed = []
    for segment in plan.segments:
        record = audio_source.by_id(segment.utterance_id)
        wave = resample_linear(load_audio(record, audio_source.root), rate)
        offset = int(round(segment.start_s * rate))
        placed.append((offset, wave.samples))

    n_total = max(offset + len(samples) for offset, samples in placed)
    mix = np.zeros(n_total, dtype=np.float64)
    for offset, samples in placed:
        mix[offset : offset + len(samples)] += samples

    scale = 1.0
    peak = float(np.max(np.abs(mix))) if n_total else 0.0
    if peak > PEAK_CEILING:
        scale = PEAK_CEILING / peak
        mix *= scale

    extras = {
        "target_rate_hz": rate,
        "scale": scale,
        "segment_sample_offsets": [offset for offset, _ in placed],
        "segment_sample_lengths": [len(samples) for _, samples in placed],
    }
    if policy.uses_custom_bounds():
        extras["custom_bounds"] = True
    return Waveform(mix, rate), plan.to_metadata(extras)


def _make_clip(
    pool: Manifest, index: int, master_seed: int, policy: MixPolicy
) -> tuple[ClipPlan, int]:
    last_error: Exception | None = None
    for attempt in range(policy.max_retries + 1):
        seed = clip_seed(master_seed, index, attempt)
        try:
            return plan_clip(pool, seed, policy), attempt
        except UtteranceTooShort as exc:
            last_error = exc
            log.warning("clip %d attempt %d failed: %s", index, attempt, exc)
    raise UtteranceTooShort(
        f"clip {index}: no valid plan after {policy.max_retries + 1} attempts"
    ) from last_error


def generate_set(
    pool: Manifest,
    count: int,
    master_seed: int,
    policy: MixPolicy | None = None,
    out_dir: str | Path = ".",
    *,
    render: bool = True,
    workers: int = 1,
) -> Path:
    """Emit `count` clips plus a JSONL clip manifest; returns the manifest path.

    Clip i draws its seed from hash(master_seed, i), so output is identical
    regardless of worker count or completion order. With render=False only
    the manifest is written (timing metadata without audio).
    """
    policy = policy or MixPolicy()
    policy.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    audio_dir = out_dir / "audio"
    if render:
        audio_dir.mkdir(exist_ok=True)

    def build(index: int) -> ClipMetadata:
        plan, attempt = _make_clip(pool, index, master_seed, policy)
        plan = replace(plan, clip_id=f"clip_{index:06d}")
        if render:
            wave, meta = render_clip(plan, pool, policy)
            wav_name = f"{plan.clip_id}.wav"
            write_wav_pcm16(audio_dir / wav_name, wave)
            extras = dict(meta.extras)
            extras["audio_path"] = f"audio/{wav_name}"
            if attempt:
                extras["retry_attempt"] = attempt
            return replace(meta, extras=extras)
        extras: dict = {"rendered": False}
        if policy.uses_custom_bounds():
            extras["custom_bounds"] = True
        if attempt:
            extras["retry_attempt"] = attempt
        return plan.to_metadata(extras)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_exec:
            metas = list(pool_exec.map(build, range(count)))
    else:
        metas = [build(i) for i in range(count)]

    manifest_path = out_dir / "clips.jsonl"
    write_clip_manifest(metas, manifest_path)
    return manifest_path


def write_clip_manifest(metas: Iterable[ClipMetadata], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for meta in metas:
            fh.write(json.dumps(meta.to_dict(), sort_keys=True) + "\n")


def read_clip_manifest(path: str | Path) -> list[ClipMetadata]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ClipMetadata.from_dict(json.loads(line)))
    return out
