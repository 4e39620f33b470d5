"""Relevance and alignment judging of model outputs.

Each (question, gold, output) triple gets two independent boolean calls:
relevance (did the output address the question at all) and alignment (is
it semantically correct). Two backends implement the same interface: a
remote chat-completion judge constrained to YES/NO replies, and a
deterministic rule judge built on a shipped vocabulary/synonym table so
the whole pipeline runs offline and reproducibly.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import httpx

from .errors import (
    BackendUnavailable,
    ExcessiveJudgeFailures,
    UnparseableReply,
)

log = logging.getLogger(__name__)

_DATA_DIR = Path(__file__).parent / "data"
DEFAULT_SYNONYMS_PATH = _DATA_DIR / "answer_synonyms.json"

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")
_SUPERLATIVE_GOLD_RE = re.compile(r"^(\d+) \(the \w+\)$")


@dataclass(frozen=True)
class ModelOutputRecord:
    """One model answer to one question, keyed (clip_id, question, model_tag)."""

    clip_id: str
    question: str
    gold: str
    output: str
    model_tag: str
    attribute: str | None = None
    kind: str | None = None

    def to_dict(self) -> dict:
        out = {
            "clip_id": self.clip_id,
            "question": self.question,
            "gold": self.gold,
            "output": self.output,
            "model_tag": self.model_tag,
        }
        if self.attribute is not None:
            out["attribute"] = self.attribute
        if self.kind is not None:
            out["kind"] = self.kind
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelOutputRecord":
        return cls(
            clip_id=obj["clip_id"],
            question=obj["question"],
            gold=obj["gold"],
            output=obj["output"],
            model_tag=obj["model_tag"],
            attribute=obj.get("attribute"),
            kind=obj.get("kind"),
        )


@dataclass(frozen=True)
class JudgeVerdict:
    clip_id: str
    question: str
    model_tag: str
    relevant: bool
    aligned: bool
    backend: str
    raw_judge_reply: str
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "question": self.question,
            "model_tag": self.model_tag,
            "relevant": self.relevant,
            "aligned": self.aligned,
            "backend": self.backend,
            "raw_judge_reply": self.raw_judge_reply,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "JudgeVerdict":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})


class JudgeBackend(Protocol):
    name: str

    def judge_relevance(self, record: ModelOutputRecord) -> tuple[bool, str]: ...

    def judge_alignment(self, record: ModelOutputRecord) -> tuple[bool, str]: ...


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class RuleJudge:
    """Deterministic vocabulary/synonym matcher standing in for the LLM judge."""

    name = "rule"

    def __init__(self, synonyms_path: str | Path | None = None):
        data = json.loads(Path(synonyms_path or DEFAULT_SYNONYMS_PATH).read_text(encoding="utf-8"))
        self.synonyms: dict[str, dict[str, str]] = data["synonyms"]
        self.ordinals: dict[str, int] = data["ordinals"]
        self.relevance_vocab: dict[str, set[str]] = {
            attr: set(words) for attr, words in data["relevance_vocab"].items()
        }

    def _infer_kind(self, record: ModelOutputRecord) -> str:
        if record.kind:
            return record.kind
        q = record.question.lower()
        if re.search(r"\bwho\b|\bwhich (speaker|one)\b", q):
            return "superlative"
        return "ordinal_attribute"

    def _infer_attribute(self, record: ModelOutputRecord) -> str | None:
        if record.attribute:
            return record.attribute
        q = record.question.lower()
        for attribute in ("emotion", "pitch", "speed", "energy", "gender"):
            if attribute in q:
                return attribute
        return None

    def _order_tokens(self, tokens: list[str]) -> set[int]:
        found = set()
        for token in tokens:
            if token.isdigit():
                found.add(int(token))
            elif token in self.ordinals:
                found.add(self.ordinals[token])
        return found

    def judge_relevance(self, record: ModelOutputRecord) -> tuple[bool, str]:
        tokens = _tokens(record.output)
        if self._infer_kind(record) == "superlative":
            orders = self._order_tokens(tokens)
            if orders:
                return True, f"order token(s) {sorted(orders)}"
            return False, "no speaking-order token in output"
        attribute = self._infer_attribute(record)
        if attribute is None:
            vocab = set().union(*self.relevance_vocab.values())
        else:
            vocab = self.relevance_vocab.get(attribute, set())
        hits = [t for t in tokens if t in vocab]
        if hits:
            return True, f"attribute vocabulary hit {hits[:3]}"
        return False, f"no {attribute or 'attribute'} vocabulary in output"

    def judge_alignment(self, record: ModelOutputRecord) -> tuple[bool, str]:
        tokens = _tokens(record.output)
        superlative = _SUPERLATIVE_GOLD_RE.match(record.gold.strip())
        if superlative:
            target = int(superlative.group(1))
            orders = self._order_tokens(tokens)
            if target in orders:
                return True, f"output names position {target}"
            return False, f"output order tokens {sorted(orders)} miss {target}"
        attribute = self._infer_attribute(record)
        table = self.synonyms.get(attribute or "", {})
        mapped = [table.get(t, t) for t in tokens]
        gold_tokens = _tokens(record.gold)
        gold_mapped = [table.get(t, t) for t in gold_tokens]
        for i in range(len(mapped) - len(gold_mapped) + 1):
            if mapped[i : i + len(gold_mapped)] == gold_mapped:
                return True, f"matched '{record.gold}' at token {i}"
        return False, f"'{record.gold}' not found in output"


@dataclass(frozen=True)
class LLMJudgeSettings:
    endpoint_url: str
    model: str
    api_key_env: str = "SPEECHCAPS_API_KEY"
    timeout_s: float = 30.0
    reply_retries: int = 3
    http_retries: int = 3
    backoff_base_s: float = 0.5
    audit_path: str | None = None


_RELEVANCE_SYSTEM = (
    "You judge whether a response attempts to answer a question. "
    "Reply with exactly YES or NO."
)
_RELEVANCE_USER = (
    "Question: {question}\n"
    "Response: {output}\n"
    "Does the response address what the question asks for, even if it might be wrong? "
    "Reply YES or NO."
)
_ALIGNMENT_SYSTEM = (
    "You judge whether a response matches a reference answer. "
    "Reply with exactly YES or NO."
)
_ALIGNMENT_USER = (
    "Question: {question}\n"
    "Reference answer: {gold}\n"
    "Response: {output}\n"
    "Is the response semantically consistent with the reference answer? "
    "Reply YES or NO."
)


class LLMJudge:
    """Chat-completion judge client with a constrained YES/NO reply protocol."""

    name = "llm"

    def __init__(
        self,
        settings: LLMJudgeSettings,
        transport: httpx.BaseTransport | None = None,
    ):
        api_key = os.environ.get(settings.api_key_env, "")
        if not api_key:
            raise BackendUnavailable(
                f"environment variable {settings.api_key_env} is not set"
            )
        self.settings = settings
        self._client = httpx.Client(
            timeout=settings.timeout_s,
            transport=transport,
            headers={"Authorization": f"Bearer {api_key}"},
        )
        self._audit_lock = threading.Lock()

    def close(self) -> None:
        self._client.close()

    def _audit(self, payload: dict, response: dict | str) -> None:
        if not self.settings.audit_path:
            return
        row = json.dumps({"request": payload, "response": response}, sort_keys=True)
        with self._audit_lock:
            with open(self.settings.audit_path, "a", encoding="utf-8") as fh:
                fh.write(row + "\n")

    def _post(self, payload: dict) -> str:
        last = "no attempt made"
        for attempt in range(self.settings.http_retries):
            if attempt:
                time.sleep(self.settings.backoff_base_s * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.settings.endpoint_url, json=payload)
            except httpx.HTTPError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code in (429, 500, 502, 503, 504):
                last = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise BackendUnavailable(f"judge endpoint returned HTTP {resp.status_code}")
            body = resp.json()
            self._audit(payload, body)
            try:
                return body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError):
                return ""  # malformed body counts as an unparseable reply
        self._audit(payload, last)
        raise BackendUnavailable(f"judge endpoint unreachable after retries ({last})")

    def _ask(self, system: str, user: str) -> tuple[bool, str]:
        payload = {
            "model": self.settings.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        replies = []
        for _ in range(self.settings.reply_retries):
            content = self._post(payload)
            replies.append(content)
            norm = content.strip().upper().rstrip(".!")
            if norm == "YES":
                return True, content
            if norm == "NO":
                return False, content
        raise UnparseableReply(
            f"no YES/NO reply after {self.settings.reply_retries} attempts: {replies!r}"
        )

    def judge_relevance(self, record: ModelOutputRecord) -> tuple[bool, str]:
        return self._ask(
            _RELEVANCE_SYSTEM,
            _RELEVANCE_USER.format(question=record.question, output=record.output),
        )

    def judge_alignment(self, record: ModelOutputRecord) -> tuple[bool, str]:
        return self._ask(
            _ALIGNMENT_SYSTEM,
            _ALIGNMENT_USER.format(
                question=record.question, gold=record.gold, output=record.output
            ),
        )


def judge_record(record: ModelOutputRecord, backend: JudgeBackend) -> JudgeVerdict:
    """Run both judge calls for one record and enforce aligned => relevant."""
    relevant, raw_rel = backend.judge_relevance(record)
    aligned, raw_ali = backend.judge_alignment(record)
    if aligned and not relevant:
        log.warning(
            "conflicting verdict for (%s, %r): aligned without relevance; storing both false",
            record.clip_id,
            record.question,
        )
        aligned = False
    return JudgeVerdict(
        clip_id=record.clip_id,
        question=record.question,
        model_tag=record.model_tag,
        relevant=relevant,
        aligned=aligned,
        backend=backend.name,
        raw_judge_reply=f"relevance: {raw_rel} | alignment: {raw_ali}",
    )


def judge_batch(
    records: list[ModelOutputRecord],
    backend: JudgeBackend,
    concurrency: int = 1,
    max_failure_fraction: float = 0.05,
) -> list[JudgeVerdict]:
    """Judge all records, preserving input order regardless of scheduling.

    Records whose backend calls keep failing are marked failed (excluded
    from metrics later); the whole batch aborts when more than
    max_failure_fraction of records fail.
    """

    def one(record: ModelOutputRecord) -> JudgeVerdict:
        try:
            return judge_record(record, backend)
        except (BackendUnavailable, UnparseableReply) as exc:
            log.error("judging failed for (%s, %r): %s", record.clip_id, record.question, exc)
            return JudgeVerdict(
                clip_id=record.clip_id,
                question=record.question,
                model_tag=record.model_tag,
                relevant=False,
                aligned=False,
                backend=backend.name,
                raw_judge_reply=f"error: {exc}",
                failed=True,
            )

    if concurrency > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            verdicts = list(pool.map(one, records))
    else:
        verdicts = [one(r) for r in records]

    failed = sum(v.failed for v in verdicts)
    if records and failed / len(records) > max_failure_fraction:
        raise ExcessiveJudgeFailures(
            f"{failed}/{len(records)} records failed judging "
            f"(limit {max_failure_fraction:.0%})"
        )
    if failed:
        log.warning("%d/%d records failed judging and are excluded from metrics", failed, len(records))
    return verdicts


def write_verdicts(verdicts: Iterable[JudgeVerdict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_dict(), sort_keys=True) + "\n")


def read_verdicts(path: str | Path) -> list[JudgeVerdict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(JudgeVerdict.from_dict(json.loads(line)))
    return out


def read_records(path: str | Path) -> list[ModelOutputRecord]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ModelOutputRecord.from_dict(json.loads(line)))
    return out


def write_records(records: Iterable[ModelOutputRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
