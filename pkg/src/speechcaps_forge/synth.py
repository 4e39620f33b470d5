"""Synthetic utterance pools for demos, smoke runs, and tests.

Each fake utterance is a harmonic tone whose fundamental, amplitude, and
implied speaking rate realize a low/medium/high tier per attribute, so the
pool carries coherent ingested labels and the prosody stages have real
signal structure to measure.
"""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav_pcm16
from .prosody import count_phonemes, load_lexicon

DEFAULT_LEXICON_PATH = Path(__file__).parent / "data" / "lexicon.txt"

PITCH_TIERS = {
    "male": {"low": 90.0, "medium": 115.0, "high": 150.0},
    "female": {"low": 170.0, "medium": 215.0, "high": 280.0},
}
AMPLITUDE_TIERS = {"low": 0.08, "medium": 0.2, "high": 0.45}
RATE_TIERS = {"low": 2.5, "medium": 5.0, "high": 9.0}
EMOTIONS = ("sad", "cheerful", "shouting", "neutral", "angry", "fearful")
LEVELS = ("low", "medium", "high")


def harmonic_tone(
    f0_hz: float, duration_s: float, rate_hz: int, amplitude: float, phase: float = 0.0
) -> Waveform:
    """Four-harmonic complex with 1/h rolloff, peak-normalized to amplitude."""
    t = np.arange(int(round(duration_s * rate_hz))) / rate_hz
    x = np.zeros_like(t)
    for h in range(1, 5):
        x += math.sin(phase) * 0 + np.sin(2 * np.pi * h * f0_hz * t + phase * h) / h
    peak = np.max(np.abs(x)) or 1.0
    return Waveform(x * (amplitude / peak), rate_hz)


def _pick_transcript(rng: random.Random, lexicon: dict[str, int], target_phonemes: int) -> tuple[str, int]:
    words = sorted(lexicon)
    chosen: list[str] = []
    total = 0
    while total < target_phonemes:
        word = rng.choice(words)
        chosen.append(word.lower())
        total += lexicon[word]
    return " ".join(chosen), total


def make_pool(
    out_dir: str | Path,
    n_utterances: int = 30,
    seed: int = 0,
    rate_hz: int = 16000,
    n_speakers: int = 6,
    with_labels: bool = True,
    min_duration_s: float = 1.2,
) -> Path:
    """Write a synthetic pool (WAVs + pool.jsonl) and return the manifest path."""
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    lexicon = load_lexicon(DEFAULT_LEXICON_PATH)
    rng = random.Random(seed)

    speakers = [
        (f"spk{i:02d}", "female" if i % 2 else "male") for i in range(n_speakers)
    ]
    lines = []
    for i in range(n_utterances):
        speaker_id, gender = speakers[i % n_speakers]
        pitch_tier = rng.choice(LEVELS)
        speed_tier = rng.choice(LEVELS)
        energy_tier = rng.choice(LEVELS)
        pps = RATE_TIERS[speed_tier]
        target = max(4, int(round(pps * rng.uniform(max(min_duration_s, 1.2), 3.0))))
        transcript, n_phonemes = _pick_transcript(rng, lexicon, target)
        duration = max(min_duration_s, n_phonemes / pps)
        wave = harmonic_tone(
            PITCH_TIERS[gender][pitch_tier],
            duration,
            rate_hz,
            AMPLITUDE_TIERS[energy_tier],
            phase=rng.uniform(0, 2 * np.pi),
        )
        wav_name = f"utt{i:04d}.wav"
        write_wav_pcm16(audio_dir / wav_name, wave)
        row = {
            "id": f"utt{i:04d}",
            "speaker_id": speaker_id,
            "gender": gender,
            "emotion": rng.choice(EMOTIONS),
            "transcript": transcript,
            "audio_path": f"audio/{wav_name}",
            "duration_s": len(wave.samples) / rate_hz,
            "sample_rate_hz": rate_hz,
        }
        if with_labels:
            row["pitch_label"] = pitch_tier
            row["speed_label"] = speed_tier
            row["energy_label"] = energy_tier
        lines.append(json.dumps(row, sort_keys=True))

    manifest_path = out_dir / "pool.jsonl"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path
