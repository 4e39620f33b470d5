"""Caption prompts and question-answer pairs from clip metadata.

Captions: each clip's metadata is formatted into an instruction prompt for
an external describer, one attribute block per speaker plus temporal
relation hints ("overlapping slightly" / "following"). A deterministic
rule captioner is included as an offline backend.

QA: ordinal questions ask for an attribute of the N-th speaker; superlative
questions ask which speaker has the extreme label of an ordered attribute,
emitted only when that extremum is unique. Pitch superlatives are scoped
to a single stated gender.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import MissingLabels, TemplateError
from .mixer import ClipMetadata, SpeakerSegment

QA_ATTRIBUTES = ("gender", "emotion", "pitch", "speed", "energy")
ORDERED_ATTRIBUTES = ("pitch", "speed", "energy")
LABEL_RANK = {"low": 0, "medium": 1, "high": 2}
ORDINAL_WORDS = {1: "first", 2: "second", 3: "third", 4: "fourth", 5: "fifth"}

_DATA_DIR = Path(__file__).parent / "data"
DEFAULT_TEMPLATES_PATH = _DATA_DIR / "question_templates.json"


def load_templates(path: str | Path | None = None) -> dict:
    return json.loads(Path(path or DEFAULT_TEMPLATES_PATH).read_text(encoding="utf-8"))


def segment_label(segment: SpeakerSegment, attribute: str) -> str | None:
    return {
        "gender": segment.gender,
        "emotion": segment.emotion,
        "pitch": segment.pitch_label,
        "speed": segment.speed_label,
        "energy": segment.energy_label,
    }[attribute]


@dataclass(frozen=True)
class QAPolicy:
    ordinal_quota: int | None = None
    superlative_extremes: tuple[str, ...] = ("highest", "lowest")
    min_superlative_eligible: int = 2


@dataclass(frozen=True)
class CaptionPrompt:
    clip_id: str
    prompt_text: str
    metadata_block: str

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "prompt_text": self.prompt_text,
            "metadata_block": self.metadata_block,
        }


@dataclass(frozen=True)
class QAItem:
    """One question with its oracle answer and the rule to re-derive it."""

    clip_id: str
    question: str
    answer: str
    kind: str  # ordinal_attribute | superlative
    attribute: str
    target_order_index: int | None = None  # ordinal: which speaker is asked about
    answer_order_index: int | None = None  # superlative: which speaker is the answer
    extreme: str | None = None  # superlative: highest | lowest
    gender_scope: str | None = None  # pitch superlatives only

    def to_dict(self) -> dict:
        out = {
            "clip_id": self.clip_id,
            "question": self.question,
            "answer": self.answer,
            "kind": self.kind,
            "attribute": self.attribute,
        }
        for key in ("target_order_index", "answer_order_index", "extreme", "gender_scope"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "QAItem":
        return cls(
            clip_id=obj["clip_id"],
            question=obj["question"],
            answer=obj["answer"],
            kind=obj["kind"],
            attribute=obj["attribute"],
            target_order_index=obj.get("target_order_index"),
            answer_order_index=obj.get("answer_order_index"),
            extreme=obj.get("extreme"),
            gender_scope=obj.get("gender_scope"),
        )


def _fmt_seconds(value: float) -> str:
    return repr(round(value, 3))


def _render(template: str, **fields) -> str:
    try:
        return template.format(**fields)
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"unresolved placeholder {exc} in template: {template!r}") from exc


def build_caption_prompt(meta: ClipMetadata, templates: dict | None = None) -> CaptionPrompt:
    """Instantiate the caption-request prompt for one clip's metadata."""
    templates = templates or load_templates()
    cap = templates["caption"]
    lines = [_render(cap["preamble"], n=len(meta.segments))]
    for segment in meta.segments:
        lines.append(
            _render(
                cap["speaker_block"],
                index=segment.order_index,
                gender=segment.gender,
                emotion=segment.emotion,
                pitch=segment.pitch_label,
                speed=segment.speed_label,
                energy=segment.energy_label,
                start=_fmt_seconds(segment.start_s),
                end=_fmt_seconds(segment.end_s),
            )
        )
    for i, mode in enumerate(meta.boundary_modes):
        key = "relation_overlap" if mode == "overlap" else "relation_gap"
        lines.append(_render(cap[key], prev=i + 1, next=i + 2))
    return CaptionPrompt(
        clip_id=meta.clip_id,
        prompt_text="\n".join(lines),
        metadata_block=json.dumps(meta.to_dict(), sort_keys=True),
    )


def rule_caption(meta: ClipMetadata) -> str:
    """Offline describer: assemble a caption directly from the labels."""
    sentences = []
    for i, segment in enumerate(meta.segments):
        desc = (
            f"a {segment.gender} speaker sounding {segment.emotion}, "
            f"with {segment.pitch_label} pitch, {segment.speed_label} speed, "
            f"and {segment.energy_label} energy"
        )
        if i == 0:
            sentences.append(f"The audio starts with {desc}.")
        elif meta.boundary_modes[i - 1] == "overlap":
            sentences.append(f"Overlapping slightly, {desc} joins in.")
        else:
            sentences.append(f"Following this, {desc} continues.")
    return " ".join(sentences)


def _check_labels(meta: ClipMetadata) -> None:
    for segment in meta.segments:
        for attribute in QA_ATTRIBUTES:
            if segment_label(segment, attribute) is None:
                raise MissingLabels(
                    f"{meta.clip_id}: segment {segment.order_index} lacks a {attribute} label"
                )


def _unique_extreme(
    eligible: Sequence[SpeakerSegment], attribute: str, extreme: str
) -> SpeakerSegment | None:
    ranks = [LABEL_RANK[segment_label(s, attribute)] for s in eligible]
    target = max(ranks) if extreme == "highest" else min(ranks)
    hits = [s for s, r in zip(eligible, ranks) if r == target]
    return hits[0] if len(hits) == 1 else None


def superlative_answer(order_index: int) -> str:
    return f"{order_index} (the {ORDINAL_WORDS[order_index]})"


def generate_qa(
    meta: ClipMetadata,
    rng_seed: int,
    policy: QAPolicy | None = None,
    templates: dict | None = None,
) -> list[QAItem]:
    """Emit the QA pairs one clip supports; deterministic under the seed."""
    policy = policy or QAPolicy()
    templates = templates or load_templates()
    _check_labels(meta)
    rng = random.Random(rng_seed)
    n = len(meta.segments)
    items: list[QAItem] = []

    pairs = [(pos, attr) for pos in range(1, n + 1) for attr in QA_ATTRIBUTES]
    if policy.ordinal_quota is not None and policy.ordinal_quota < len(pairs):
        pairs = sorted(rng.sample(pairs, policy.ordinal_quota))
    for pos, attribute in pairs:
        question = _render(
            rng.choice(templates["ordinal"]),
            n=n,
            attribute=attribute,
            ordinal=ORDINAL_WORDS[pos],
        )
        items.append(
            QAItem(
                clip_id=meta.clip_id,
                question=question,
                answer=segment_label(meta.segments[pos - 1], attribute),
                kind="ordinal_attribute",
                attribute=attribute,
                target_order_index=pos,
            )
        )

    for attribute in ("speed", "energy"):
        for extreme in policy.superlative_extremes:
            winner = _unique_extreme(meta.segments, attribute, extreme)
            if winner is None:
                continue
            question = _render(
                rng.choice(templates["superlative"]), n=n, attribute=attribute, extreme=extreme
            )
            items.append(
                QAItem(
                    clip_id=meta.clip_id,
                    question=question,
                    answer=superlative_answer(winner.order_index),
                    kind="superlative",
                    attribute=attribute,
                    answer_order_index=winner.order_index,
                    extreme=extreme,
                )
            )

    for gender in ("male", "female"):
        eligible = [s for s in meta.segments if s.gender == gender]
        if len(eligible) < policy.min_superlative_eligible:
            continue
        for extreme in policy.superlative_extremes:
            winner = _unique_extreme(eligible, "pitch", extreme)
            if winner is None:
                continue
            question = _render(
                rng.choice(templates["pitch_superlative"]), n=n, gender=gender, extreme=extreme
            )
            items.append(
                QAItem(
                    clip_id=meta.clip_id,
                    question=question,
                    answer=superlative_answer(winner.order_index),
                    kind="superlative",
                    attribute="pitch",
                    answer_order_index=winner.order_index,
                    extreme=extreme,
                    gender_scope=gender,
                )
            )
    return items


def _clip_qa_seed(rng_seed: int, clip_id: str) -> int:
    digest = hashlib.blake2b(f"{rng_seed}:{clip_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def generate_qa_set(
    clips: Iterable[ClipMetadata],
    rng_seed: int,
    policy: QAPolicy | None = None,
    templates: dict | None = None,
) -> list[QAItem]:
    """Per-clip QA concatenated, de-duplicated on (clip_id, question)."""
    templates = templates or load_templates()
    seen: set[tuple[str, str]] = set()
    items: list[QAItem] = []
    for meta in clips:
        for item in generate_qa(meta, _clip_qa_seed(rng_seed, meta.clip_id), policy, templates):
            key = (item.clip_id, item.question)
            if key not in seen:
                seen.add(key)
                items.append(item)
    return items


def write_qa_manifest(items: Iterable[QAItem], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")


def read_qa_manifest(path: str | Path) -> list[QAItem]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(QAItem.from_dict(json.loads(line)))
    return out


def write_caption_prompts(
    clips: Iterable[ClipMetadata],
    path: str | Path,
    templates: dict | None = None,
    backend_quotas: dict[str, int] | None = None,
) -> None:
    """Write one prompt row per clip, assigning describer backends by quota.

    Quotas map backend name to a clip budget, consumed in insertion order;
    clips beyond all quotas fall to the offline "rule" backend, which also
    fills in its caption directly.
    """
    templates = templates or load_templates()
    remaining = dict(backend_quotas or {})
    with Path(path).open("w", encoding="utf-8") as fh:
        for meta in clips:
            backend = "rule"
            for name, quota in remaining.items():
                if quota > 0:
                    backend = name
                    remaining[name] -= 1
                    break
            prompt = build_caption_prompt(meta, templates)
            row = prompt.to_dict()
            row["backend"] = backend
            if backend == "rule":
                row["caption"] = rule_caption(meta)
            fh.write(json.dumps(row, sort_keys=True) + "\n")
