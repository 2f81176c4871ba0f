"""Run manifests: the reproducibility record written next to every output.

A manifest captures the command, its config snapshot, the seed, and content
hashes of the inputs. Two runs with the same manifest fingerprint produce
byte-identical data outputs; the fingerprint deliberately excludes the
timestamp.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path


def _package_version() -> str:
    try:
        return metadata.version("sceneloc")
    except metadata.PackageNotFoundError:  # running from a checkout
        return "unknown"


def file_fingerprint(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def build_manifest(
    command: str,
    config: dict,
    seed: int | None,
    inputs: dict[str, str | Path],
) -> dict:
    body = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {name: file_fingerprint(path) for name, path in inputs.items()},
        "version": _package_version(),
    }
    body["fingerprint"] = manifest_fingerprint(body)
    body["created_at"] = datetime.now(timezone.utc).isoformat()
    return body


def manifest_fingerprint(manifest: dict) -> str:
    stable = {
        k: manifest[k] for k in ("command", "config", "seed", "inputs") if k in manifest
    }
    return hashlib.sha256(
        json.dumps(stable, sort_keys=True).encode("utf-8")
    ).hexdigest()


def write_manifest(manifest: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
