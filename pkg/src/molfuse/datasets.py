"""Dataset assembly: join parsed molecules with their PubChem descriptor
records and one text vector per molecule, producing training samples and
the on-disk dataset artifacts the CLI commands exchange.

Only molecules with a full descriptor record enter the multimodal dataset;
exclusions carry a reason code.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graphs import RbfConfig, build_graph
from .pubchem import PubChemClient, TextDescriptors, build_multimodal_manifest, render_description
from .qm9 import PROPERTY_ORDER, Molecule, TargetId
from .textfeat import FeaturizerStats, featurize_descriptors, text_sha256
from .training import ConfigError, Sample


@dataclass
class DatasetEntry:
    """One included molecule with its text side fully rendered."""

    molecule: Molecule
    descriptors: TextDescriptors
    description: str
    text_sha256: str

    @property
    def cid(self) -> int:
        return self.descriptors.cid


def build_entries(molecules, client: PubChemClient):
    """Resolve and fetch descriptors for every molecule; returns
    (entries, exclusions)."""
    included, excluded = build_multimodal_manifest(molecules, client)
    entries = []
    for mol, desc in included:
        description = render_description(desc)
        entries.append(DatasetEntry(mol, desc, description, text_sha256(description)))
    return entries, excluded


def entries_from_descriptors(pairs):
    """Assemble entries from already-available (molecule, descriptors)
    pairs, bypassing the network client (offline/synthetic runs)."""
    entries = []
    for mol, desc in pairs:
        description = render_description(desc)
        entries.append(DatasetEntry(mol, desc, description, text_sha256(description)))
    return entries


def save_dataset(path, entries) -> None:
    """Self-contained JSONL: geometry, targets, descriptors, rendered text."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            m = e.molecule
            record = {
                "id": m.id,
                "elements": list(m.elements),
                "coords": [[float(v) for v in row] for row in m.coords],
                "partial_charges": [float(v) for v in m.partial_charges],
                "targets": {t.value: m.targets[t] for t in PROPERTY_ORDER},
                "descriptors": e.descriptors.to_dict(),
                "description": e.description,
                "text_sha256": e.text_sha256,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_dataset(path):
    entries = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            molecule = Molecule(
                id=obj["id"],
                elements=tuple(obj["elements"]),
                coords=np.asarray(obj["coords"], dtype=np.float64),
                targets={TargetId(k): float(v) for k, v in obj["targets"].items()},
                partial_charges=np.asarray(obj["partial_charges"], dtype=np.float64),
            )
            entries.append(DatasetEntry(
                molecule=molecule,
                descriptors=TextDescriptors.from_dict(obj["descriptors"]),
                description=obj["description"],
                text_sha256=obj["text_sha256"],
            ))
        except (KeyError, ValueError, TypeError) as err:
            raise ConfigError(f"{path}:{line_no}: malformed dataset record ({err})") from None
    return entries


def dataset_content_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_description_manifest(path, entries) -> None:
    """The exporter's input: one (cid, description) record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({"cid": e.cid, "description": e.description}) + "\n")


def featurizer_stats(entries) -> FeaturizerStats:
    """Standardization constants from the included-molecule set; frozen into
    the run manifest so training and serving agree."""
    return FeaturizerStats.from_descriptors([e.descriptors for e in entries])


def make_samples(entries, rbf: RbfConfig, embedding_source: str = "featurizer",
                 embeddings: dict | None = None, stats: FeaturizerStats | None = None):
    """Build training samples; the text vector source is exclusive per run."""
    if embedding_source not in ("featurizer", "file"):
        raise ConfigError(f"unknown embedding source {embedding_source!r}")
    if embedding_source == "file" and embeddings is None:
        raise ConfigError("embedding_source=file requires a loaded embedding map")
    if embedding_source == "featurizer" and stats is None:
        stats = featurizer_stats(entries)

    samples = []
    for e in entries:
        if embedding_source == "featurizer":
            text = featurize_descriptors(e.descriptors, stats)
        else:
            record = embeddings.get(e.cid)
            if record is None:
                raise ConfigError(f"embedding file has no record for cid {e.cid} (molecule {e.molecule.id})")
            text = record.vector
        samples.append(Sample(
            mol_id=e.molecule.id,
            graph=build_graph(e.molecule, rbf),
            targets=e.molecule.targets,
            text=text,
        ))
    return samples
