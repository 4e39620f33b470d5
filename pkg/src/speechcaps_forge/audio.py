"""WAV decoding/encoding and sample-rate conversion.

The reader handles the PCM variants the corpus accepts (8/16/24-bit integer
and 32-bit float, any channel count) including WAVE_FORMAT_EXTENSIBLE
headers, which the stdlib ``wave`` module cannot parse for float data.
Output is always 16-bit PCM mono.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFile, EmptySignal, UnsupportedFormat

_FMT_PCM = 1
_FMT_FLOAT = 3
_FMT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(self.samples * factor, self.sample_rate_hz)


@dataclass(frozen=True)
class WavInfo:
    """Header-level facts, readable without decoding the payload."""

    n_frames: int
    sample_rate_hz: int
    channels: int
    bits_per_sample: int
    audio_format: int

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.sample_rate_hz


def _parse_chunks(raw: bytes, path: Path) -> tuple[dict, bytes]:
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise CorruptFile(f"{path}: not a RIFF/WAVE file")
    fmt: dict | None = None
    data: bytes | None = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body_start = pos + 8
        if body_start + size > len(raw):
            raise CorruptFile(f"{path}: chunk {chunk_id!r} truncated")
        body = raw[body_start : body_start + size]
        if chunk_id == b"fmt ":
            if size < 16:
                raise CorruptFile(f"{path}: fmt chunk too short")
            audio_format, channels, rate, _, block_align, bits = struct.unpack_from(
                "<HHIIHH", body, 0
            )
            if audio_format == _FMT_EXTENSIBLE:
                # actual format lives in the first two bytes of the SubFormat GUID
                if size < 40:
                    raise CorruptFile(f"{path}: extensible fmt chunk too short")
                (audio_format,) = struct.unpack_from("<H", body, 24)
            fmt = {
                "audio_format": audio_format,
                "channels": channels,
                "rate": rate,
                "block_align": block_align,
                "bits": bits,
            }
        elif chunk_id == b"data":
            data = body
        pos = body_start + size + (size & 1)  # chunks are word-aligned
    if fmt is None or data is None:
        raise CorruptFile(f"{path}: missing fmt or data chunk")
    if fmt["channels"] < 1 or fmt["rate"] < 1:
        raise CorruptFile(f"{path}: nonsensical fmt fields")
    return fmt, data


def _check_format(fmt: dict, path: Path) -> None:
    af, bits = fmt["audio_format"], fmt["bits"]
    if af == _FMT_PCM and bits in (8, 16, 24):
        return
    if af == _FMT_FLOAT and bits == 32:
        return
    raise UnsupportedFormat(f"{path}: format {af} at {bits} bits is not supported")


def read_wav_info(path: str | Path) -> WavInfo:
    """Read header facts (frame count, rate, layout) for a WAV file."""
    path = Path(path)
    fmt, data = _parse_chunks(path.read_bytes(), path)
    _check_format(fmt, path)
    bytes_per_frame = fmt["channels"] * (fmt["bits"] // 8)
    return WavInfo(
        n_frames=len(data) // bytes_per_frame,
        sample_rate_hz=fmt["rate"],
        channels=fmt["channels"],
        bits_per_sample=fmt["bits"],
        audio_format=fmt["audio_format"],
    )


def read_wav(path: str | Path) -> Waveform:
    """Decode a PCM WAV file to mono float samples in [-1, 1].

    Multi-channel input is averaged down to mono; the sample rate is kept
    as stored (resampling happens at mix time).
    """
    path = Path(path)
    fmt, data = _parse_chunks(path.read_bytes(), path)
    _check_format(fmt, path)
    bits, channels = fmt["bits"], fmt["channels"]
    bytes_per_frame = channels * (bits // 8)
    n_frames = len(data) // bytes_per_frame
    data = data[: n_frames * bytes_per_frame]

    if fmt["audio_format"] == _FMT_FLOAT:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        x = np.clip(x, -1.0, 1.0)
    elif bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 8:
        x = (np.frombuffer(data, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    else:  # 24-bit little-endian, sign-extended by hand
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val = np.where(val >= 1 << 23, val - (1 << 24), val)
        x = val.astype(np.float64) / float(1 << 23)

    if channels > 1:
        x = x.reshape(-1, channels).mean(axis=1)
    return Waveform(x, fmt["rate"])


def write_wav_pcm16(path: str | Path, wave: Waveform) -> bytes:
    """Write mono 16-bit PCM and return the exact bytes written."""
    x = np.clip(wave.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    rate = wave.sample_rate_hz
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _FMT_PCM, 1, rate, rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    blob = header + payload
    Path(path).write_bytes(blob)
    return blob


def resample_linear(wave: Waveform, target_rate_hz: int) -> Waveform:
    """Resample by linear interpolation onto the target rate's sample grid."""
    if len(wave.samples) == 0:
        raise EmptySignal("cannot resample an empty waveform")
    if wave.sample_rate_hz == target_rate_hz:
        return wave
    ratio = target_rate_hz / wave.sample_rate_hz
    n_out = int(round(len(wave.samples) * ratio))
    src_positions = np.arange(n_out) / ratio
    out = np.interp(src_positions, np.arange(len(wave.samples)), wave.samples)
    return Waveform(out, target_rate_hz)
