"""Run manifests: every artifact a command writes is tied to the manifest
describing the inputs that produced it.

The manifest id hashes only deterministic inputs (config snapshot, dataset
hash, embedding source, code version), so reruns with identical inputs get
the identical id; wall-clock metadata rides along but never enters the id.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    manifest_id: str
    config: dict
    dataset_hash: str = ""
    cache_snapshot_id: str = ""
    embedding_source: str = ""
    embedding_file_hash: str = ""
    code_version: str = __version__
    created_at: str = ""
    artifacts: dict = field(default_factory=dict)   # name -> sha256

    @classmethod
    def build(cls, config: dict, dataset_hash: str = "", cache_snapshot_id: str = "",
              embedding_source: str = "", embedding_file_hash: str = "") -> "RunManifest":
        identity = {
            "config": config,
            "dataset_hash": dataset_hash,
            "embedding_source": embedding_source,
            "embedding_file_hash": embedding_file_hash,
            "code_version": __version__,
        }
        manifest_id = hashlib.sha256(
            json.dumps(identity, sort_keys=True).encode("utf-8")
        ).hexdigest()
        return cls(
            manifest_id=manifest_id,
            config=config,
            dataset_hash=dataset_hash,
            cache_snapshot_id=cache_snapshot_id,
            embedding_source=embedding_source,
            embedding_file_hash=embedding_file_hash,
            created_at=datetime.now(timezone.utc).isoformat(),
        )

    def add_artifact(self, name: str, path) -> None:
        self.artifacts[name] = file_sha256(path)

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))
