"""Run manifests: every CLI output directory records what produced it."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

TOOL_VERSION = "0.1.0"


def stable_hash(payload: dict) -> str:
    """Hash of the run-defining fields (command, config, paths, seed)."""
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str]
    outputs: dict[str, str]
    seed: int | None = None
    tool_version: str = TOOL_VERSION
    started_at: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))

    def hash(self) -> str:
        # Timestamps are excluded so identical runs share a hash.
        return stable_hash(
            {
                "command": self.command,
                "config": self.config,
                "inputs": self.inputs,
                "outputs": self.outputs,
                "seed": self.seed,
                "tool_version": self.tool_version,
            }
        )

    def write(self, out_dir: str | Path) -> str:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "manifest_hash": self.hash(),
        }
        # "run_manifest.json": checkpoint directories keep their own
        # manifest.json alongside.
        (out_dir / "run_manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return self.hash()
