"""Command line entry point: ``speechcaps-forge <stage> [flags]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import __version__
from .config import load_config
from .errors import ForgeError
from .metrics import ROUNDING_TOLERANCE, check_identity_table
from .pipeline import run_stage


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="run configuration JSON file")
    parser.add_argument("--force", action="store_true", help="skip staleness/no-op checks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speechcaps-forge",
        description="Synthesize multi-talker clips, label prosody, generate QA, judge, report.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("validate", help="validate a pool manifest and echo it")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("mix", help="plan and render multi-talker clips")
    p.add_argument("--pool", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rate", type=int, help="target sample rate (default 16000)")
    p.add_argument("--gap-min", type=float)
    p.add_argument("--gap-max", type=float)
    p.add_argument("--overlap-min", type=float)
    p.add_argument("--overlap-max", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-audio", action="store_true", help="emit metadata only, skip rendering")
    p.add_argument(
        "--allow-custom-bounds",
        action="store_true",
        help="permit gap/overlap bounds outside the standard ranges (watermarked)",
    )
    _add_common(p)

    p = sub.add_parser("measure", help="measure pitch, energy, speaking rate")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lexicon")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("label", help="percentile-band measurements into labels")
    p.add_argument("--measurements", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds-out")
    p.add_argument("--filtered-out", help="labeled manifest of test-set utterances")
    p.add_argument("--band-width", type=float)
    p.add_argument("--per-speaker", action="store_true")
    _add_common(p)

    p = sub.add_parser("dist", help="export an attribute histogram CSV")
    p.add_argument("--measurements", required=True)
    p.add_argument("--attribute", required=True, choices=["pitch", "speed", "energy"])
    p.add_argument("--group-by", choices=["speaker", "gender"])
    p.add_argument("--manifest", help="needed with --group-by")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("qa", help="generate question-answer pairs from clips")
    p.add_argument("--clips", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--templates")
    p.add_argument("--ordinal-quota", type=int)
    _add_common(p)

    p = sub.add_parser("caption-prompts", help="generate caption prompts from clips")
    p.add_argument("--clips", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--templates")
    _add_common(p)

    p = sub.add_parser("judge", help="judge model outputs for relevance and alignment")
    p.add_argument("--records", required=True)
    p.add_argument("--backend", choices=["rule", "llm"])
    p.add_argument("--out", required=True)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--audit", help="append raw judge requests/replies to this JSONL")
    _add_common(p)

    p = sub.add_parser("report", help="aggregate verdicts into metric tables")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--format", choices=["json", "markdown", "csv"], default="markdown")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("check-identity", help="audit overall = IF x conditional in a results CSV")
    p.add_argument("--table", required=True)
    p.add_argument("--tolerance", type=float, default=ROUNDING_TOLERANCE)
    p.add_argument("--strict", action="store_true", help="exit nonzero when a row is flagged")

    return parser


def _config_from_args(args: argparse.Namespace):
    config = load_config(getattr(args, "config", None))
    if args.stage == "mix":
        mix = config.mix
        updates = {}
        if args.rate is not None:
            updates["target_rate_hz"] = args.rate
        if args.gap_min is not None or args.gap_max is not None:
            updates["gap_bounds_s"] = (
                args.gap_min if args.gap_min is not None else mix.gap_bounds_s[0],
                args.gap_max if args.gap_max is not None else mix.gap_bounds_s[1],
            )
        if args.overlap_min is not None or args.overlap_max is not None:
            updates["overlap_bounds_s"] = (
                args.overlap_min if args.overlap_min is not None else mix.overlap_bounds_s[0],
                args.overlap_max if args.overlap_max is not None else mix.overlap_bounds_s[1],
            )
        if args.allow_custom_bounds:
            updates["allow_custom_bounds"] = True
        if updates:
            mix = dataclasses.replace(mix, **updates)
            mix.validate()
            config = dataclasses.replace(config, mix=mix)
    if args.stage == "label":
        updates = {}
        if args.band_width is not None:
            updates["band_width"] = args.band_width
        if args.per_speaker:
            updates["per_speaker_bands"] = True
        if updates:
            config = dataclasses.replace(config, **updates)
    if args.stage == "qa" and args.ordinal_quota is not None:
        qa = dataclasses.replace(config.qa, ordinal_quota=args.ordinal_quota)
        config = dataclasses.replace(config, qa=qa)
    if args.stage == "judge" and args.backend is not None:
        judge = dataclasses.replace(config.judge, backend=args.backend)
        config = dataclasses.replace(config, judge=judge)
    return config


def _params_from_args(args: argparse.Namespace) -> dict:
    params: dict = {}
    mapping = {
        "validate": ["manifest", "out"],
        "mix": ["pool", "count", "seed", "workers"],
        "measure": ["manifest", "lexicon", "out"],
        "label": ["measurements", "manifest", "out", "thresholds_out", "filtered_out"],
        "dist": ["measurements", "attribute", "group_by", "manifest", "out"],
        "qa": ["clips", "seed", "out", "templates"],
        "caption-prompts": ["clips", "out", "templates"],
        "judge": ["records", "out", "concurrency", "audit"],
        "report": ["verdicts", "qa", "format", "out"],
    }
    for key in mapping[args.stage]:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if args.stage == "mix":
        params["out_dir"] = args.out
        params["render"] = not args.no_audio
    return params


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    if args.stage == "check-identity":
        results = check_identity_table(args.table, args.tolerance)
        flagged = 0
        for tag, check in results:
            status = "PASS" if check.ok else "FLAG"
            flagged += not check.ok
            print(f"{status}  {tag}  residual={check.residual:.6f}")
        print(f"{len(results) - flagged}/{len(results)} rows consistent")
        return 1 if (flagged and args.strict) else 0

    try:
        config = _config_from_args(args)
        result = run_stage(args.stage, config, _params_from_args(args), force=args.force)
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if result.skipped:
        print(f"{args.stage}: up to date, skipped")
    else:
        for name, path in result.outputs.items():
            print(f"{args.stage}: wrote {name} -> {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
