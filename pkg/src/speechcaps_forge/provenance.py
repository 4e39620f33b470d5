"""Sidecar provenance records binding artifacts to their inputs.

Every stage output gets a ``<name>.prov.json`` sidecar listing the input
and output hashes plus the config fingerprint and seed. Staleness checks
walk the chain backwards through input sidecars, so editing any ancestor
artifact is detected from anywhere downstream.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Mapping

from .errors import StaleUpstream

SIDECAR_SUFFIX = ".prov.json"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(1 << 20):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_dir(path: str | Path) -> str:
    """Aggregate hash over a directory: sorted relative names + file hashes."""
    path = Path(path)
    digest = hashlib.sha256()
    for file in sorted(p for p in path.rglob("*") if p.is_file()):
        digest.update(str(file.relative_to(path)).encode())
        digest.update(bytes.fromhex(sha256_file(file)))
    return digest.hexdigest()


def _hash_path(path: Path) -> str:
    return sha256_dir(path) if path.is_dir() else sha256_file(path)


def sidecar_path(artifact: str | Path) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + SIDECAR_SUFFIX)


def _entry(path: Path, base: Path) -> dict:
    try:
        rel = os.path.relpath(path, base)
    except ValueError:
        rel = str(path)
    return {"path": rel, "sha256": _hash_path(path)}


def write_provenance(
    artifact: str | Path,
    stage: str,
    fingerprint: str,
    seed: int,
    inputs: Mapping[str, Path],
    outputs: Mapping[str, Path],
    tool_version: str,
    extra: dict | None = None,
) -> Path:
    artifact = Path(artifact)
    base = artifact.parent
    record = {
        "stage": stage,
        "tool": "speechcaps-forge",
        "tool_version": tool_version,
        "fingerprint": fingerprint,
        "seed": seed,
        "inputs": {name: _entry(Path(p), base) for name, p in sorted(inputs.items())},
        "outputs": {name: _entry(Path(p), base) for name, p in sorted(outputs.items())},
    }
    if extra:
        record.update(extra)
    out = sidecar_path(artifact)
    out.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def load_provenance(artifact: str | Path) -> dict | None:
    side = sidecar_path(artifact)
    if not side.is_file():
        return None
    return json.loads(side.read_text(encoding="utf-8"))


def _resolve(entry: dict, base: Path) -> Path:
    p = Path(entry["path"])
    return p if p.is_absolute() else (base / p)


def check_chain(paths: Mapping[str, Path] | list[Path]) -> None:
    """Verify every recorded ancestor of the given inputs is unchanged.

    For each input that carries a sidecar, re-hash the files its record
    names (inputs and outputs) and recurse into their sidecars; any
    mismatch raises StaleUpstream naming the drifted file.
    """
    queue = list(paths.values()) if isinstance(paths, Mapping) else list(paths)
    seen: set[Path] = set()
    while queue:
        artifact = Path(queue.pop()).resolve()
        if artifact in seen:
            continue
        seen.add(artifact)
        record = load_provenance(artifact)
        if record is None:
            continue
        base = sidecar_path(artifact).parent
        for section in ("outputs", "inputs"):
            for name, entry in record.get(section, {}).items():
                target = _resolve(entry, base)
                if not target.exists():
                    raise StaleUpstream(
                        f"{artifact.name}: recorded {section[:-1]} '{name}' missing ({target})"
                    )
                if _hash_path(target) != entry["sha256"]:
                    raise StaleUpstream(
                        f"{artifact.name}: {section[:-1]} '{name}' changed since "
                        f"this artifact was produced ({target})"
                    )
                if section == "inputs":
                    queue.append(target)


def is_current(
    artifact: str | Path,
    fingerprint: str,
    inputs: Mapping[str, Path],
) -> bool:
    """True when the artifact exists and its record matches config + inputs."""
    artifact = Path(artifact)
    if not artifact.exists():
        return False
    record = load_provenance(artifact)
    if record is None or record.get("fingerprint") != fingerprint:
        return False
    base = sidecar_path(artifact).parent
    recorded = record.get("inputs", {})
    if set(recorded) != set(inputs):
        return False
    for name, entry in recorded.items():
        current = Path(inputs[name])
        if not current.exists() or _hash_path(current) != entry["sha256"]:
            return False
    for name, entry in record.get("outputs", {}).items():
        target = _resolve(entry, base)
        if not target.exists() or _hash_path(target) != entry["sha256"]:
            return False
    return True
