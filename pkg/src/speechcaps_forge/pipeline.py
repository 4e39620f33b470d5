"""Stage orchestration: wiring the modules into reproducible CLI stages.

Each stage reads plain files, writes plain files, and leaves a sidecar
provenance record. Re-running a stage whose inputs, outputs, and config
fingerprint are unchanged is a no-op; running a stage whose upstream
artifacts drifted raises StaleUpstream unless forced.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .config import RunConfig, fingerprint
from .corpus import UtteranceRecord, load_audio, load_manifest, save_manifest
from .errors import MissingUpstream
from .judge import (
    LLMJudge,
    LLMJudgeSettings,
    RuleJudge,
    judge_batch,
    read_records,
    read_verdicts,
    write_verdicts,
)
from .labeler import (
    assign_labels,
    compute_threshold_set,
    export_distribution,
    write_distribution_csv,
    write_labels,
)
from .metrics import compute_reports, render_report
from .mixer import generate_set, read_clip_manifest
from .promptgen import (
    generate_qa_set,
    load_templates,
    read_qa_manifest,
    write_caption_prompts,
    write_qa_manifest,
)
from .prosody import load_lexicon, measure, read_measurements, write_measurements
from .provenance import check_chain, is_current, write_provenance

log = logging.getLogger(__name__)

DEFAULT_LEXICON = Path(__file__).parent / "data" / "lexicon.txt"

STAGES = (
    "validate",
    "mix",
    "measure",
    "label",
    "dist",
    "qa",
    "caption-prompts",
    "judge",
    "report",
)


@dataclass
class StageResult:
    stage: str
    outputs: dict[str, Path]
    skipped: bool = False


def _lexicon_path(config: RunConfig, params: dict) -> Path:
    return Path(params.get("lexicon") or config.lexicon_path or DEFAULT_LEXICON)


def _stage_validate(config: RunConfig, params: dict) -> dict[str, Path]:
    manifest = load_manifest(params["manifest"])
    out = Path(params["out"])
    root = manifest.root.resolve()
    rewritten = []
    for record in manifest:
        resolved = manifest.resolve_audio(record).resolve()
        rewritten.append(dataclasses.replace(record, audio_path=_relativized(resolved, out.parent)))
    save_manifest(rewritten, out)
    return {"manifest": out}


def _relativized(target: Path, base: Path) -> str:
    import os

    try:
        return os.path.relpath(target, base.resolve())
    except ValueError:
        return str(target)


def _stage_measure(config: RunConfig, params: dict) -> dict[str, Path]:
    manifest = load_manifest(params["manifest"])
    lexicon = load_lexicon(_lexicon_path(config, params))
    measurements = [
        measure(record, load_audio(record, manifest.root), lexicon) for record in manifest
    ]
    out = Path(params["out"])
    write_measurements(measurements, out)
    return {"measurements": out}


def _stage_label(config: RunConfig, params: dict) -> dict[str, Path]:
    measurements = read_measurements(params["measurements"])
    manifest = load_manifest(params["manifest"])
    genders = {r.id: r.gender for r in manifest}
    speakers = {r.id: r.speaker_id for r in manifest}
    thresholds = compute_threshold_set(
        measurements,
        genders,
        band_width=config.band_width,
        per_speaker=config.per_speaker_bands,
        speakers=speakers,
    )
    labels = assign_labels(measurements, thresholds, genders, speakers)
    out = Path(params["out"])
    write_labels(labels, out)

    thresholds_out = Path(params.get("thresholds_out") or out.with_suffix(".thresholds.json"))
    thresholds_out.write_text(thresholds.to_json() + "\n", encoding="utf-8")

    filtered_out = Path(params.get("filtered_out") or out.with_name(out.stem + ".filtered.jsonl"))
    by_id = {label.utterance_id: label for label in labels}
    kept: list[UtteranceRecord] = []
    for record in manifest:
        label = by_id.get(record.id)
        if label is None or not label.in_test_set:
            continue
        resolved = manifest.resolve_audio(record).resolve()
        kept.append(
            dataclasses.replace(
                record,
                pitch_label=label.pitch_label,
                speed_label=label.speed_label,
                energy_label=label.energy_label,
                audio_path=_relativized(resolved, filtered_out.parent),
            )
        )
    save_manifest(kept, filtered_out)
    log.info("labeling kept %d/%d utterances for the test pool", len(kept), len(manifest))
    return {"labels": out, "thresholds": thresholds_out, "filtered_manifest": filtered_out}


def _stage_dist(config: RunConfig, params: dict) -> dict[str, Path]:
    measurements = read_measurements(params["measurements"])
    group_of = None
    if params.get("group_by"):
        manifest = load_manifest(params["manifest"])
        key = params["group_by"]
        if key == "speaker":
            group_of = {r.id: r.speaker_id for r in manifest}
        elif key == "gender":
            group_of = {r.id: r.gender for r in manifest}
        else:
            raise ValueError(f"--group-by must be speaker or gender, not '{key}'")
    rows = export_distribution(measurements, params["attribute"], group_of)
    out = Path(params["out"])
    write_distribution_csv(rows, out)
    return {"histogram": out}


def _stage_mix(config: RunConfig, params: dict) -> dict[str, Path]:
    pool = load_manifest(params["pool"])
    out_dir = Path(params["out_dir"])
    render = params.get("render", True)
    manifest_path = generate_set(
        pool,
        count=params["count"],
        master_seed=params.get("seed", config.master_seed),
        policy=config.mix,
        out_dir=out_dir,
        render=render,
        workers=params.get("workers", config.mix_workers),
    )
    outputs = {"clips_manifest": manifest_path}
    if render:
        outputs["audio"] = out_dir / "audio"
    return outputs


def _stage_qa(config: RunConfig, params: dict) -> dict[str, Path]:
    clips = read_clip_manifest(params["clips"])
    templates = load_templates(params.get("templates") or config.templates_path)
    items = generate_qa_set(
        clips, params.get("seed", config.master_seed), config.qa, templates
    )
    out = Path(params["out"])
    write_qa_manifest(items, out)
    log.info("generated %d QA pairs from %d clips", len(items), len(clips))
    return {"qa_manifest": out}


def _stage_caption_prompts(config: RunConfig, params: dict) -> dict[str, Path]:
    clips = read_clip_manifest(params["clips"])
    templates = load_templates(params.get("templates") or config.templates_path)
    out = Path(params["out"])
    write_caption_prompts(clips, out, templates, config.caption_backend_quotas)
    return {"caption_prompts": out}


def make_judge_backend(config: RunConfig, audit_path: str | None = None):
    settings = config.judge
    if settings.backend == "rule":
        return RuleJudge(settings.synonyms_path)
    if settings.backend == "llm":
        return LLMJudge(
            LLMJudgeSettings(
                endpoint_url=settings.endpoint_url,
                model=settings.model,
                api_key_env=settings.api_key_env,
                audit_path=audit_path or settings.audit_path,
            )
        )
    raise ValueError(f"unknown judge backend '{settings.backend}'")


def _stage_judge(config: RunConfig, params: dict) -> dict[str, Path]:
    records = read_records(params["records"])
    backend = make_judge_backend(config, params.get("audit"))
    verdicts = judge_batch(
        records,
        backend,
        concurrency=params.get("concurrency", config.judge.concurrency),
        max_failure_fraction=config.judge.max_failure_fraction,
    )
    out = Path(params["out"])
    write_verdicts(verdicts, out)
    return {"verdicts": out}


def _stage_report(config: RunConfig, params: dict) -> dict[str, Path]:
    verdicts = read_verdicts(params["verdicts"])
    qa_items = read_qa_manifest(params["qa"])
    reports = compute_reports(verdicts, qa_items)
    out = Path(params["out"])
    out.write_text(render_report(reports, params.get("format", "markdown")), encoding="utf-8")
    return {"report": out}


_RUNNERS = {
    "validate": (_stage_validate, ("manifest",)),
    "measure": (_stage_measure, ("manifest", "lexicon")),
    "label": (_stage_label, ("measurements", "manifest")),
    "dist": (_stage_dist, ("measurements", "manifest")),
    "mix": (_stage_mix, ("pool",)),
    "qa": (_stage_qa, ("clips",)),
    "caption-prompts": (_stage_caption_prompts, ("clips",)),
    "judge": (_stage_judge, ("records",)),
    "report": (_stage_report, ("verdicts", "qa")),
}


def run_stage(
    stage: str,
    config: RunConfig,
    params: dict,
    force: bool = False,
) -> StageResult:
    """Execute one pipeline stage with provenance and staleness handling."""
    runner, input_keys = _RUNNERS[stage]
    inputs: dict[str, Path] = {}
    for key in input_keys:
        value = params.get(key)
        if value is None:
            continue
        path = Path(value)
        if not path.exists():
            raise MissingUpstream(f"{stage}: input '{key}' not found: {path}")
        inputs[key] = path

    fp = fingerprint(config, {k: str(v) for k, v in sorted(params.items())})
    if not force:
        check_chain(inputs)
        probe = runner_primary_output(stage, params)
        if probe is not None and is_current(probe, fp, inputs):
            log.info("%s: inputs and config unchanged, skipping", stage)
            return StageResult(stage=stage, outputs={"primary": probe}, skipped=True)

    outputs = runner(config, params)
    primary = next(iter(outputs.values()))
    write_provenance(
        primary,
        stage=stage,
        fingerprint=fp,
        seed=params.get("seed", config.master_seed),
        inputs=inputs,
        outputs=outputs,
        tool_version=__version__,
    )
    return StageResult(stage=stage, outputs=outputs)


def runner_primary_output(stage: str, params: dict) -> Path | None:
    """Where the stage's sidecar will live, for the no-op check."""
    if stage == "mix":
        return Path(params["out_dir"]) / "clips.jsonl"
    for key in ("out",):
        if key in params:
            return Path(params[key])
    return None
