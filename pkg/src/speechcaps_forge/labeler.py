"""Percentile banding of prosody measurements into low/medium/high labels.

Each attribute keeps only the bottom, middle, and top slices of its
distribution (15% each by default, nearest-rank percentiles); everything
else is too ambiguous to label and is dropped. Pitch is banded within
each gender because male and female pitch distributions barely overlap;
speed and energy are banded over the whole population. An utterance
enters the test set only when all three attributes landed in a band.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    DegenerateDistribution,
    MissingThresholds,
    PopulationTooSmall,
)
from .prosody import ProsodyMeasurement

ATTRIBUTES = ("pitch", "speed", "energy")
LABEL_ORDER = {"low": 0, "medium": 1, "high": 2}
MIN_POPULATION = 20
DEFAULT_BAND_WIDTH = 0.15


def measurement_value(m: ProsodyMeasurement, attribute: str) -> float | None:
    if attribute == "pitch":
        return m.pitch_hz
    if attribute == "speed":
        return m.speaking_rate_pps
    if attribute == "energy":
        return m.energy_db
    raise ValueError(f"unknown attribute '{attribute}'")


@dataclass(frozen=True)
class BandThresholds:
    """Cut points delimiting the low/medium/high bands for one scope."""

    attribute: str
    gender_scope: str
    low_max: float
    mid_min: float
    mid_max: float
    high_min: float
    population_size: int

    def label_for(self, value: float) -> str | None:
        if value <= self.low_max:
            return "low"
        if self.mid_min <= value <= self.mid_max:
            return "medium"
        if value >= self.high_min:
            return "high"
        return None

    def to_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "gender_scope": self.gender_scope,
            "low_max": self.low_max,
            "mid_min": self.mid_min,
            "mid_max": self.mid_max,
            "high_min": self.high_min,
            "population_size": self.population_size,
        }


@dataclass(frozen=True)
class LabeledUtterance:
    utterance_id: str
    pitch_label: str | None
    speed_label: str | None
    energy_label: str | None
    in_test_set: bool

    def to_dict(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "pitch_label": self.pitch_label,
            "speed_label": self.speed_label,
            "energy_label": self.energy_label,
            "in_test_set": self.in_test_set,
        }


def _nearest_rank(sorted_values: Sequence[float], q: Fraction) -> float:
    """Nearest-rank percentile: the ceil(q*N)-th smallest value (1-based)."""
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[rank - 1]


def compute_thresholds(
    measurements: Sequence[ProsodyMeasurement],
    attribute: str,
    gender_scope: str = "all",
    *,
    genders: Mapping[str, str] | None = None,
    band_width: float = DEFAULT_BAND_WIDTH,
) -> BandThresholds:
    """Nearest-rank band cut points over the in-scope measurement values.

    Scope is the whole population, or one gender for pitch (genders maps
    utterance_id to gender). Ties are broken by a stable sort on
    (value, utterance_id); unorderable cut points raise
    DegenerateDistribution.
    """
    if gender_scope != "all":
        if genders is None:
            raise MissingThresholds("gender scoping requires a gender mapping")
        in_scope = [m for m in measurements if genders.get(m.utterance_id) == gender_scope]
    else:
        in_scope = list(measurements)
    pairs = sorted(
        (
            (measurement_value(m, attribute), m.utterance_id)
            for m in in_scope
            if measurement_value(m, attribute) is not None
        ),
    )
    w = Fraction(str(band_width))
    minimum = max(MIN_POPULATION, math.ceil(1 / w))
    if len(pairs) < minimum:
        raise PopulationTooSmall(
            f"{attribute}/{gender_scope}: {len(pairs)} measurements, need >= {minimum}"
        )
    values = [v for v, _ in pairs]

    low_max = _nearest_rank(values, w)
    mid_min = _nearest_rank(values, Fraction(1, 2) - w / 2)
    mid_cut = _nearest_rank(values, Fraction(1, 2) + w / 2)
    high_cut = _nearest_rank(values, 1 - w)
    below_mid_cut = [v for v in values if v < mid_cut]
    above_high_cut = [v for v in values if v > high_cut]
    if not below_mid_cut or not above_high_cut:
        raise DegenerateDistribution(
            f"{attribute}/{gender_scope}: too many ties to separate bands"
        )
    mid_max = max(below_mid_cut)
    high_min = min(above_high_cut)
    if not (low_max < mid_min <= mid_max < high_min):
        raise DegenerateDistribution(
            f"{attribute}/{gender_scope}: cut points not strictly ordered "
            f"({low_max}, {mid_min}, {mid_max}, {high_min})"
        )
    return BandThresholds(
        attribute=attribute,
        gender_scope=gender_scope,
        low_max=low_max,
        mid_min=mid_min,
        mid_max=mid_max,
        high_min=high_min,
        population_size=len(values),
    )


@dataclass
class ThresholdSet:
    """All thresholds needed to label a pool, keyed by (attribute, scope)."""

    thresholds: dict[tuple[str, str], BandThresholds]
    per_speaker: bool = False

    def lookup(self, attribute: str, gender: str, speaker_id: str) -> BandThresholds:
        if self.per_speaker:
            key = (attribute, f"speaker:{speaker_id}")
        elif attribute == "pitch":
            key = (attribute, gender)
        else:
            key = (attribute, "all")
        if key not in self.thresholds:
            raise MissingThresholds(f"no thresholds for {key}")
        return self.thresholds[key]

    def to_json(self) -> str:
        payload = {
            "per_speaker": self.per_speaker,
            "thresholds": [t.to_dict() for _, t in sorted(self.thresholds.items())],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def compute_threshold_set(
    measurements: Sequence[ProsodyMeasurement],
    genders: Mapping[str, str],
    *,
    band_width: float = DEFAULT_BAND_WIDTH,
    per_speaker: bool = False,
    speakers: Mapping[str, str] | None = None,
) -> ThresholdSet:
    """Build the full threshold table: gender-split pitch, global speed/energy.

    With per_speaker=True every attribute is instead banded within each
    speaker's own measurements (speakers maps utterance_id to speaker_id).
    """
    table: dict[tuple[str, str], BandThresholds] = {}
    if per_speaker:
        if speakers is None:
            raise MissingThresholds("per-speaker banding requires a speaker mapping")
        by_speaker: dict[str, list[ProsodyMeasurement]] = {}
        for m in measurements:
            by_speaker.setdefault(speakers[m.utterance_id], []).append(m)
        for sid, group in sorted(by_speaker.items()):
            for attribute in ATTRIBUTES:
                table[(attribute, f"speaker:{sid}")] = compute_thresholds(
                    group, attribute, band_width=band_width
                )
        return ThresholdSet(table, per_speaker=True)

    for gender in ("male", "female"):
        if any(genders.get(m.utterance_id) == gender for m in measurements):
            table[("pitch", gender)] = compute_thresholds(
                measurements, "pitch", gender, genders=genders, band_width=band_width
            )
    for attribute in ("speed", "energy"):
        table[(attribute, "all")] = compute_thresholds(
            measurements, attribute, band_width=band_width
        )
    return ThresholdSet(table)


def assign_labels(
    measurements: Sequence[ProsodyMeasurement],
    thresholds: ThresholdSet,
    genders: Mapping[str, str],
    speakers: Mapping[str, str] | None = None,
) -> list[LabeledUtterance]:
    """Band every measurement; values in the excluded regions get no label."""
    speakers = speakers or {}
    out = []
    for m in measurements:
        gender = genders.get(m.utterance_id, "")
        speaker = speakers.get(m.utterance_id, "")
        labels: dict[str, str | None] = {}
        for attribute in ATTRIBUTES:
            value = measurement_value(m, attribute)
            if value is None:
                labels[attribute] = None
                continue
            bands = thresholds.lookup(attribute, gender, speaker)
            labels[attribute] = bands.label_for(value)
        out.append(
            LabeledUtterance(
                utterance_id=m.utterance_id,
                pitch_label=labels["pitch"],
                speed_label=labels["speed"],
                energy_label=labels["energy"],
                in_test_set=all(labels[a] is not None for a in ATTRIBUTES),
            )
        )
    return out


def export_distribution(
    measurements: Sequence[ProsodyMeasurement],
    attribute: str,
    group_of: Mapping[str, str] | None = None,
    n_bins: int = 50,
) -> list[tuple]:
    """Histogram rows (bin_start, bin_end, count[, group]) over the observed range.

    Bin edges are shared across groups so grouped histograms overlay
    cleanly. A single distinct value degenerates to one bin.
    """
    values = [
        (measurement_value(m, attribute), group_of.get(m.utterance_id, "") if group_of else None)
        for m in measurements
        if measurement_value(m, attribute) is not None
    ]
    if not values:
        raise ValueError("no measurements with a value for this attribute")
    lo = min(v for v, _ in values)
    hi = max(v for v, _ in values)
    if lo == hi:
        edges = [(lo, hi)]
    else:
        width = (hi - lo) / n_bins
        edges = [(lo + i * width, lo + (i + 1) * width) for i in range(n_bins)]

    groups = sorted({g for _, g in values}) if group_of else [None]
    rows: list[tuple] = []
    for group in groups:
        counts = [0] * len(edges)
        for v, g in values:
            if group_of and g != group:
                continue
            idx = min(int((v - lo) / (hi - lo) * len(edges)), len(edges) - 1) if hi > lo else 0
            counts[idx] += 1
        for (start, end), count in zip(edges, counts):
            rows.append((start, end, count) if group is None else (start, end, count, group))
    return rows


def write_distribution_csv(rows: Iterable[tuple], path: str | Path) -> None:
    rows = list(rows)
    grouped = rows and len(rows[0]) == 4
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "bin_end", "count", "group"] if grouped else ["bin_start", "bin_end", "count"])
        writer.writerows(rows)


def write_labels(labels: Iterable[LabeledUtterance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(json.dumps(label.to_dict(), sort_keys=True) + "\n")


def read_labels(path: str | Path) -> list[LabeledUtterance]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out.append(
                    LabeledUtterance(
                        utterance_id=obj["utterance_id"],
                        pitch_label=obj.get("pitch_label"),
                        speed_label=obj.get("speed_label"),
                        energy_label=obj.get("energy_label"),
                        in_test_set=obj["in_test_set"],
                    )
                )
    return out
