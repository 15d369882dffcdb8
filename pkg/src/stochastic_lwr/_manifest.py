"""Run manifests written next to every command-line artifact."""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from stochastic_lwr import _io


def sha256(filename: str | os.PathLike) -> str:
    """Hex digest of the file content."""
    digest = hashlib.sha256()
    with open(filename, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(output: str | os.PathLike) -> Path:
    """``<output>.manifest.yaml`` for an artifact path."""
    output = Path(output)
    return output.with_name(output.name + ".manifest.yaml")


@dataclass
class RunManifest:
    """Provenance of one command: inputs, seeds, artifact hashes and timing.

    Two manifests describe the same run if :py:meth:`key` agrees; their
    artifact hashes are then expected to agree as well.
    """

    command: str
    config_paths: dict[str, str] = field(default_factory=dict)
    seeds: dict[str, int] = field(default_factory=dict)
    parameters: dict[str, Any] = field(default_factory=dict)
    artifacts: dict[str, str] = field(default_factory=dict)
    wall_clock: float = 0.0
    version: str = ""
    _start: float = field(default_factory=time.perf_counter, repr=False)

    def __post_init__(self):
        if not self.version:
            import stochastic_lwr

            self.version = stochastic_lwr.__version__

    def add_artifact(self, filename: str | os.PathLike) -> str:
        """Hash ``filename`` and record it under its file name."""
        digest = sha256(filename)
        self.artifacts[Path(filename).name] = digest
        return digest

    def stop(self) -> None:
        """Record the elapsed wall-clock time since creation."""
        self.wall_clock = time.perf_counter() - self._start

    def key(self) -> tuple:
        """Everything that determines the artifacts: command, inputs, seeds, parameters and version."""
        return (
            self.command,
            tuple(sorted(self.config_paths.items())),
            tuple(sorted(self.seeds.items())),
            tuple(sorted((k, repr(v)) for k, v in self.parameters.items())),
            self.version,
        )

    def to_dict(self) -> dict[str, Any]:
        """Plain mapping in the manifest file layout."""
        return {
            "command": self.command,
            "version": self.version,
            "config_paths": dict(self.config_paths),
            "seeds": dict(self.seeds),
            "parameters": dict(self.parameters),
            "artifacts": dict(self.artifacts),
            "wall_clock": round(self.wall_clock, 6),
        }

    def write(self, output: str | os.PathLike) -> Path:
        """Write the manifest next to ``output`` and return its path."""
        path = manifest_path(output)
        _io.write_yaml(path, self.to_dict(), kind="manifest")
        return path

    @classmethod
    def read(cls, filename: str | os.PathLike) -> RunManifest:
        """Read a manifest file."""
        data = _io.read_yaml(filename)
        return cls(
            data["command"],
            data.get("config_paths") or {},
            data.get("seeds") or {},
            data.get("parameters") or {},
            data.get("artifacts") or {},
            float(data.get("wall_clock", 0.0)),
            data.get("version", ""),
        )
