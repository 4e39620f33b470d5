"""Aggregation of judge verdicts into the three evaluation ratios.

Counts are integers throughout; instruction-following rate (relevant /
total), overall accuracy (aligned / total), and conditional accuracy
(aligned / relevant) are derived at render time, so overall = IF x
conditional holds exactly by construction. verify_identity re-checks that
identity, with a 0.0015 tolerance when auditing externally rounded
3-decimal tables.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import KeyMismatch
from .judge import JudgeVerdict
from .promptgen import QAItem

ROUNDING_TOLERANCE = 0.0015  # 3-decimal rounding on two factors


@dataclass
class Counts:
    n_total: int = 0
    n_relevant: int = 0
    n_aligned: int = 0

    def add(self, relevant: bool, aligned: bool) -> None:
        self.n_total += 1
        self.n_relevant += int(relevant)
        self.n_aligned += int(aligned)

    @property
    def if_rate(self) -> float:
        return self.n_relevant / self.n_total if self.n_total else 0.0

    @property
    def overall_acc(self) -> float:
        return self.n_aligned / self.n_total if self.n_total else 0.0

    @property
    def cond_acc(self) -> float | None:
        return self.n_aligned / self.n_relevant if self.n_relevant else None

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_relevant": self.n_relevant,
            "n_aligned": self.n_aligned,
            "if_rate": self.if_rate,
            "overall_acc": self.overall_acc,
            "cond_acc": self.cond_acc,
        }


@dataclass
class EvalReport:
    """Per-model metric counts plus attribute/kind breakdowns."""

    model_tag: str
    counts: Counts = field(default_factory=Counts)
    n_failed: int = 0
    by_attribute: dict[str, Counts] = field(default_factory=dict)
    by_kind: dict[str, Counts] = field(default_factory=dict)

    @property
    def n_total(self) -> int:
        return self.counts.n_total

    @property
    def n_relevant(self) -> int:
        return self.counts.n_relevant

    @property
    def n_aligned(self) -> int:
        return self.counts.n_aligned

    @property
    def if_rate(self) -> float:
        return self.counts.if_rate

    @property
    def overall_acc(self) -> float:
        return self.counts.overall_acc

    @property
    def cond_acc(self) -> float | None:
        return self.counts.cond_acc

    def to_dict(self) -> dict:
        out = self.counts.to_dict()
        out["model_tag"] = self.model_tag
        out["n_failed"] = self.n_failed
        out["breakdowns"] = {
            "attribute": {k: v.to_dict() for k, v in sorted(self.by_attribute.items())},
            "kind": {k: v.to_dict() for k, v in sorted(self.by_kind.items())},
        }
        return out


def compute_report(
    verdicts: Sequence[JudgeVerdict],
    qa_items: Sequence[QAItem],
    model_tag: str | None = None,
) -> EvalReport:
    """Aggregate one model's verdicts against the QA manifest.

    Every verdict must correspond to a QA entry (KeyMismatch otherwise)
    and satisfy aligned => relevant. Failed verdicts are excluded from the
    counts but reported via n_failed.
    """
    qa_index = {(item.clip_id, item.question): item for item in qa_items}
    tags = {v.model_tag for v in verdicts}
    if model_tag is None:
        if len(tags) > 1:
            raise ValueError(f"verdicts span several model tags {sorted(tags)}; pass model_tag")
        model_tag = next(iter(tags)) if tags else ""
    report = EvalReport(model_tag=model_tag)
    for v in verdicts:
        if v.model_tag != model_tag:
            continue
        key = (v.clip_id, v.question)
        if key not in qa_index:
            raise KeyMismatch(f"verdict has no QA entry: {key}")
        if v.failed:
            report.n_failed += 1
            continue
        if v.aligned and not v.relevant:
            raise ValueError(f"verdict violates aligned => relevant: {key}")
        item = qa_index[key]
        report.counts.add(v.relevant, v.aligned)
        report.by_attribute.setdefault(item.attribute, Counts()).add(v.relevant, v.aligned)
        report.by_kind.setdefault(item.kind, Counts()).add(v.relevant, v.aligned)
    return report


def compute_reports(
    verdicts: Sequence[JudgeVerdict], qa_items: Sequence[QAItem]
) -> list[EvalReport]:
    """One report per model_tag present, ordered by tag."""
    tags = sorted({v.model_tag for v in verdicts})
    return [compute_report(verdicts, qa_items, tag) for tag in tags]


@dataclass(frozen=True)
class IdentityCheck:
    ok: bool
    residual: float


def verify_identity(report: EvalReport) -> IdentityCheck:
    """Exact-rational check that overall = IF x conditional for a report."""
    if report.n_relevant == 0:
        raise ValueError("conditional accuracy undefined: no relevant verdicts")
    overall = Fraction(report.n_aligned, report.n_total)
    product = Fraction(report.n_relevant, report.n_total) * Fraction(
        report.n_aligned, report.n_relevant
    )
    residual = abs(overall - product)
    return IdentityCheck(ok=residual == 0, residual=float(residual))


def check_identity_values(
    if_rate: float,
    overall_acc: float,
    cond_acc: float,
    tolerance: float = ROUNDING_TOLERANCE,
) -> IdentityCheck:
    """Identity check for externally reported (already rounded) ratios."""
    residual = abs(overall_acc - if_rate * cond_acc)
    return IdentityCheck(ok=residual <= tolerance, residual=residual)


def check_identity_table(
    path: str | Path, tolerance: float = ROUNDING_TOLERANCE
) -> list[tuple[str, IdentityCheck]]:
    """Audit a CSV of (model_tag, if_rate, overall_acc, cond_acc) rows."""
    results = []
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            check = check_identity_values(
                float(row["if_rate"]),
                float(row["overall_acc"]),
                float(row["cond_acc"]),
                tolerance,
            )
            results.append((row["model_tag"], check))
    return results


def _fmt3(value: float | None) -> str:
    return "—" if value is None else f"{value:.3f}"


def render_report(reports: EvalReport | Iterable[EvalReport], fmt: str = "markdown") -> str:
    """Serialize reports as json, a markdown table, or csv.

    The markdown layout puts metrics in rows and models in columns
    (IF Rate / Overall Acc. / Cond. Acc.), models ordered by tag.
    """
    if isinstance(reports, EvalReport):
        reports = [reports]
    reports = sorted(reports, key=lambda r: r.model_tag)

    if fmt == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)

    if fmt == "markdown":
        lines = [
            "| Metric | " + " | ".join(r.model_tag for r in reports) + " |",
            "|---" * (len(reports) + 1) + "|",
        ]
        rows = [
            ("IF Rate", [r.if_rate for r in reports]),
            ("Overall Acc.", [r.overall_acc for r in reports]),
            ("Cond. Acc.", [r.cond_acc for r in reports]),
        ]
        for name, values in rows:
            lines.append(f"| {name} | " + " | ".join(_fmt3(v) for v in values) + " |")
        return "\n".join(lines) + "\n"

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            [
                "model_tag",
                "scope",
                "n_total",
                "n_relevant",
                "n_aligned",
                "n_failed",
                "if_rate",
                "overall_acc",
                "cond_acc",
            ]
        )
        for r in reports:
            scopes: list[tuple[str, Counts, int]] = [("all", r.counts, r.n_failed)]
            scopes += [(f"attribute:{k}", c, 0) for k, c in sorted(r.by_attribute.items())]
            scopes += [(f"kind:{k}", c, 0) for k, c in sorted(r.by_kind.items())]
            for scope, c, failed in scopes:
                writer.writerow(
                    [
                        r.model_tag,
                        scope,
                        c.n_total,
                        c.n_relevant,
                        c.n_aligned,
                        failed,
                        repr(c.if_rate),
                        repr(c.overall_acc),
                        "" if c.cond_acc is None else repr(c.cond_acc),
                    ]
                )
        return buf.getvalue()

    raise ValueError(f"unknown report format '{fmt}'")


def parse_report_csv(text: str) -> list[EvalReport]:
    """Rebuild reports (counts and breakdowns) from render_report csv output."""
    reports: dict[str, EvalReport] = {}
    for row in csv.DictReader(io.StringIO(text)):
        tag = row["model_tag"]
        counts = Counts(
            n_total=int(row["n_total"]),
            n_relevant=int(row["n_relevant"]),
            n_aligned=int(row["n_aligned"]),
        )
        report = reports.setdefault(tag, EvalReport(model_tag=tag))
        scope = row["scope"]
        if scope == "all":
            report.counts = counts
            report.n_failed = int(row["n_failed"])
        elif scope.startswith("attribute:"):
            report.by_attribute[scope.split(":", 1)[1]] = counts
        elif scope.startswith("kind:"):
            report.by_kind[scope.split(":", 1)[1]] = counts
    return [reports[tag] for tag in sorted(reports)]
