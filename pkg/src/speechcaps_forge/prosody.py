"""Prosody measurement: pitch, energy, and speaking rate.

Pitch uses a normalized-autocorrelation tracker over a 50-500 Hz search
band (40 ms frames, 10 ms hop, voicing threshold 0.30, silence gate at
-45 dBFS) with parabolic peak refinement, summarized as the median over
voiced frames. Energy is the mean frame RMS in dBFS, ignoring frames
below -60 dBFS so leading/trailing silence cannot dilute loudness.
Speaking rate is lexicon phonemes per second with a deterministic
letter-cluster fallback for out-of-lexicon words.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .audio import Waveform
from .corpus import UtteranceRecord
from .errors import EmptySignal

FRAME_S = 0.040
HOP_S = 0.010
PITCH_MIN_HZ = 50.0
PITCH_MAX_HZ = 500.0
VOICING_THRESHOLD = 0.30
VOICING_SILENCE_DBFS = -45.0
ENERGY_FLOOR_DBFS = -60.0

_VOWELS = frozenset("aeiouy")
_DIGRAPHS = frozenset({"th", "sh", "ch", "ph", "wh", "ck"})
_WORD_RE = re.compile(r"[a-z']+")


@dataclass(frozen=True)
class ProsodyMeasurement:
    """Measured attributes for one utterance."""

    utterance_id: str
    pitch_hz: float | None
    energy_db: float
    speaking_rate_pps: float
    voiced_fraction: float

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "pitch_hz": self.pitch_hz,
            "energy_db": self.energy_db,
            "speaking_rate_pps": self.speaking_rate_pps,
            "voiced_fraction": self.voiced_fraction,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ProsodyMeasurement":
        return cls(
            utterance_id=obj["utterance_id"],
            pitch_hz=obj.get("pitch_hz"),
            energy_db=obj["energy_db"],
            speaking_rate_pps=obj["speaking_rate_pps"],
            voiced_fraction=obj["voiced_fraction"],
        )


def _frames(wave: Waveform) -> np.ndarray:
    """Slice into 40 ms frames at a 10 ms hop; short signals give one frame."""
    x = np.asarray(wave.samples, dtype=np.float64)
    if len(x) == 0:
        raise EmptySignal("waveform has no samples")
    win = int(round(FRAME_S * wave.sample_rate_hz))
    hop = int(round(HOP_S * wave.sample_rate_hz))
    if len(x) < win:
        return x[np.newaxis, :]
    starts = range(0, len(x) - win + 1, hop)
    return np.stack([x[s : s + win] for s in starts])


def _frame_rms(frames: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(frames**2, axis=1))


def _frame_pitch(frame: np.ndarray, rate: int) -> tuple[float | None, float]:
    """Best f0 candidate and its normalized autocorrelation peak for one frame."""
    x = frame - frame.mean()
    n = len(x)
    energy = float(np.dot(x, x))
    if energy <= 0.0:
        return None, 0.0
    lag_min = max(2, int(rate / PITCH_MAX_HZ))
    lag_max = min(n - 2, int(math.ceil(rate / PITCH_MIN_HZ)))
    if lag_max <= lag_min:
        return None, 0.0
    # r(tau) = sum x[i] x[i+tau] / sqrt(E_head(tau) * E_tail(tau))
    corr = np.correlate(x, x, mode="full")[n - 1 :]
    sq = x**2
    head = np.concatenate(([energy], energy - np.cumsum(sq[::-1])[:-1]))
    tail = np.concatenate(([energy], energy - np.cumsum(sq)[:-1]))
    denom = np.sqrt(np.maximum(head * tail, 1e-20))
    r = corr / denom

    band = r[lag_min : lag_max + 1]
    best = int(np.argmax(band)) + lag_min
    peak = float(r[best])
    # parabolic refinement around the integer-lag peak
    r0, r1, r2 = r[best - 1], r[best], r[best + 1]
    denom2 = r0 - 2.0 * r1 + r2
    delta = 0.0 if denom2 == 0.0 else float(np.clip(0.5 * (r0 - r2) / denom2, -1.0, 1.0))
    f0 = rate / (best + delta)
    return float(np.clip(f0, PITCH_MIN_HZ, PITCH_MAX_HZ)), peak


def estimate_pitch(wave: Waveform) -> tuple[float | None, float]:
    """Median f0 over voiced frames plus the voiced-frame fraction.

    A frame counts as voiced when its normalized autocorrelation peak in
    the 50-500 Hz lag band reaches 0.30 and its RMS is at least -45 dBFS.
    Returns (None, 0.0) for fully unvoiced input.
    """
    frames = _frames(wave)
    rms = _frame_rms(frames)
    silence_gate = 10.0 ** (VOICING_SILENCE_DBFS / 20.0)
    f0s = []
    voiced = 0
    for frame, frame_rms in zip(frames, rms):
        if frame_rms < silence_gate:
            continue
        f0, peak = _frame_pitch(frame, wave.sample_rate_hz)
        if f0 is not None and peak >= VOICING_THRESHOLD:
            voiced += 1
            f0s.append(f0)
    fraction = voiced / len(frames)
    if not f0s:
        return None, 0.0
    return float(np.median(f0s)), fraction


def compute_energy(wave: Waveform) -> float:
    """Mean frame RMS in dBFS over frames louder than -60 dBFS.

    Returns -60.0 when every frame sits below the floor.
    """
    rms = _frame_rms(_frames(wave))
    floor = 10.0 ** (ENERGY_FLOOR_DBFS / 20.0)
    loud = rms[rms > floor]
    if len(loud) == 0:
        return ENERGY_FLOOR_DBFS
    return 20.0 * math.log10(float(np.mean(loud)))


def load_lexicon(path: str | Path) -> dict[str, int]:
    """Read a "WORD PH1 PH2 ..." pronunciation file into phoneme counts."""
    counts: dict[str, int] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        word = parts[0].upper()
        if word not in counts:
            counts[word] = len(parts) - 1
    return counts


def _fallback_phonemes(word: str) -> int:
    """Letter-cluster estimate for out-of-lexicon words.

    Each maximal vowel-letter run (a,e,i,o,u,y) is one phoneme; consonant
    letters are one each, except the digraphs th/sh/ch/ph/wh/ck which
    count once.
    """
    letters = [c for c in word.lower() if c.isalpha()]
    count = 0
    i = 0
    prev_vowel = False
    while i < len(letters):
        c = letters[i]
        if c in _VOWELS:
            if not prev_vowel:
                count += 1
            prev_vowel = True
            i += 1
            continue
        prev_vowel = False
        if i + 1 < len(letters) and c + letters[i + 1] in _DIGRAPHS:
            count += 1
            i += 2
        else:
            count += 1
            i += 1
    return count


def count_phonemes(transcript: str, lexicon: Mapping[str, int]) -> int:
    """Total phonemes of a transcript: lexicon lookup with letter fallback."""
    total = 0
    for word in _WORD_RE.findall(transcript.lower()):
        known = lexicon.get(word.upper())
        total += known if known is not None else _fallback_phonemes(word)
    return total


def measure(
    record: UtteranceRecord, wave: Waveform, lexicon: Mapping[str, int]
) -> ProsodyMeasurement:
    """Combine pitch, energy, and phonemes-per-second for one utterance."""
    pitch, voiced_fraction = estimate_pitch(wave)
    energy = compute_energy(wave)
    pps = count_phonemes(record.transcript, lexicon) / record.duration_s
    return ProsodyMeasurement(
        utterance_id=record.id,
        pitch_hz=pitch,
        energy_db=energy,
        speaking_rate_pps=pps,
        voiced_fraction=voiced_fraction,
    )


def write_measurements(measurements: Iterable[ProsodyMeasurement], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for m in measurements:
            fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")


def read_measurements(path: str | Path) -> list[ProsodyMeasurement]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ProsodyMeasurement.from_dict(json.loads(line)))
    return out
