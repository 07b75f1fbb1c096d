"""Run directories: manifests, hashing, metric logs.

Every command writes exactly one ``manifest.json`` into its run
directory: the full configuration snapshot, seeds, a version string,
sha256 of every dataset it consumed, start/end timestamps and the final
metrics. Timestamps live only here and in the ndjson training log;
checkpoints, datasets and metric JSON stay byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
import time

from . import __version__
from .errors import FormatError
from .serialization import read_dataset, write_json


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def version_string() -> str:
    base = f"radarpos-{__version__}"
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if described.returncode == 0:
            return f"{base}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


def utc_stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def write_run_manifest(out_dir: str, command: str, config: dict, seeds: dict,
                       dataset_hashes: dict, metrics: dict, started_at: str) -> str:
    manifest = {
        "command": command,
        "version": version_string(),
        "config": config,
        "seeds": seeds,
        "dataset_hashes": dataset_hashes,
        "metrics": metrics,
        "started_at": started_at,
        "finished_at": utc_stamp(),
    }
    path = os.path.join(out_dir, "manifest.json")
    write_json(path, manifest)
    return path


def load_dataset_checked(path: str):
    """Read a dataset, verifying the sidecar's recorded content hash."""
    if not os.path.exists(path):
        raise FormatError(f"dataset not found: {path}")
    sidecar = path + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            side = json.load(fh)
        recorded = side.get("sha256")
        if recorded is not None and recorded != sha256_file(path):
            raise FormatError(f"{path}: content hash does not match its manifest")
    return read_dataset(path)


class NdjsonLogger:
    """Appends one JSON object per line; used for per-epoch metrics."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._fh = open(path, "w", encoding="utf-8")

    def __call__(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()
