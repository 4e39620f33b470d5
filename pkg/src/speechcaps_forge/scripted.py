"""Scripted stand-in models for pipeline round-trip checks.

The perfect model echoes the gold answer; the irrelevant model replies
with fixed off-topic text containing no attribute or ordering vocabulary,
so the rule judge scores it (relevant=False, aligned=False) everywhere.
"""

from __future__ import annotations

from typing import Callable, Iterable

from .judge import ModelOutputRecord
from .promptgen import QAItem

IRRELEVANT_REPLY = "Let me get back to you on that some other time."


def build_records(
    items: Iterable[QAItem],
    responder: Callable[[QAItem], str],
    model_tag: str,
) -> list[ModelOutputRecord]:
    return [
        ModelOutputRecord(
            clip_id=item.clip_id,
            question=item.question,
            gold=item.answer,
            output=responder(item),
            model_tag=model_tag,
            attribute=item.attribute,
            kind=item.kind,
        )
        for item in items
    ]


def perfect_outputs(items: Iterable[QAItem], model_tag: str = "perfect") -> list[ModelOutputRecord]:
    return build_records(items, lambda item: item.answer, model_tag)


def irrelevant_outputs(
    items: Iterable[QAItem], model_tag: str = "irrelevant"
) -> list[ModelOutputRecord]:
    return build_records(items, lambda item: IRRELEVANT_REPLY, model_tag)
