"""Text side of the pipeline: the 768-dim embedding transport format, a
deterministic descriptor featurizer for fully offline runs, and the
projection head that maps embeddings into the fusion space.

A run uses exactly one embedding source (file-backed or featurizer); the
run manifest records which.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .pubchem import TextDescriptors

log = logging.getLogger(__name__)

EMBED_DIM = 768
NUMERIC_BLOCK = 9                      # standardized scalar descriptor fields
HASH_BLOCK = EMBED_DIM - NUMERIC_BLOCK  # signed-hashed character trigrams
_HASH_PERSON = b"molfuse-trigram"       # fixed seed for the hashing trick

_SHA256_RE = re.compile(r"^[0-9a-f]{64}$")
_FORMULA_RE = re.compile(r"([A-Z][a-z]?)(\d*)")


class EmbeddingFormatError(Exception):
    """Embedding file violates the line-record contract."""


@dataclass
class EmbeddingRecord:
    cid: int
    text_sha256: str
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (EMBED_DIM,):
            raise EmbeddingFormatError(
                f"cid {self.cid}: vector has {self.vector.size} entries, expected {EMBED_DIM}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise EmbeddingFormatError(f"cid {self.cid}: vector contains non-finite values")
        if not _SHA256_RE.match(self.text_sha256):
            raise EmbeddingFormatError(f"cid {self.cid}: malformed text_sha256 {self.text_sha256!r}")


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_embeddings(path) -> dict:
    """Parse the line-delimited embedding file into {cid: EmbeddingRecord}.

    Lines starting with '#' are header comments. Duplicate cids resolve
    last-wins; the duplicate count is logged as a warning.
    """
    records = {}
    duplicates = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                record = EmbeddingRecord(
                    cid=int(obj["cid"]),
                    text_sha256=str(obj["text_sha256"]),
                    vector=obj["vector"],
                )
            except EmbeddingFormatError as err:
                raise EmbeddingFormatError(f"{path}:{line_no}: {err}") from None
            except (KeyError, ValueError, TypeError) as err:
                raise EmbeddingFormatError(f"{path}:{line_no}: malformed record ({err})") from None
            if record.cid in records:
                duplicates += 1
            records[record.cid] = record
    if duplicates:
        log.warning("%s: %d duplicate cid records (last wins)", path, duplicates)
    return records


def save_embeddings(path, records, header: str | None = None) -> None:
    """Inverse of load_embeddings; float precision survives the round trip
    (repr-based decimal serialization)."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for record in records:
            obj = {
                "cid": record.cid,
                "text_sha256": record.text_sha256,
                "vector": [float(v) for v in record.vector],
            }
            fh.write(json.dumps(obj) + "\n")


def formula_atom_count(formula: str) -> int:
    return sum(int(count) if count else 1 for _, count in _FORMULA_RE.findall(formula))


@dataclass
class FeaturizerStats:
    """Standardization constants for the numeric block, computed once from
    the included-molecule set and frozen into the run manifest."""

    means: np.ndarray
    scales: np.ndarray

    @classmethod
    def identity(cls) -> "FeaturizerStats":
        return cls(means=np.zeros(NUMERIC_BLOCK), scales=np.ones(NUMERIC_BLOCK))

    @classmethod
    def from_descriptors(cls, descriptors) -> "FeaturizerStats":
        rows = np.array([_numeric_fields(d) for d in descriptors])
        if rows.size == 0:
            return cls.identity()
        means = rows.mean(axis=0)
        scales = rows.std(axis=0)
        scales[scales == 0.0] = 1.0
        return cls(means=means, scales=scales)

    def to_dict(self) -> dict:
        return {"means": [float(v) for v in self.means], "scales": [float(v) for v in self.scales]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeaturizerStats":
        return cls(means=np.asarray(d["means"]), scales=np.asarray(d["scales"]))


def _numeric_fields(d: TextDescriptors) -> np.ndarray:
    return np.array([
        d.molecular_weight,
        d.xlogp if d.xlogp is not None else 0.0,
        float(d.hbond_donors),
        float(d.hbond_acceptors),
        float(d.rotatable_bonds),
        d.tpsa,
        float(d.formal_charge),
        float(formula_atom_count(d.molecular_formula)),
        1.0 if d.xlogp is not None else 0.0,
    ])


def _trigrams(s: str):
    s = s.lower()
    for i in range(len(s) - 2):
        yield s[i:i + 3]


def featurize_descriptors(d: TextDescriptors, stats: FeaturizerStats | None = None) -> np.ndarray:
    """Deterministic 768-dim vector from a descriptor record.

    Positions 0..8 are the standardized numeric fields; positions 9..767
    hold signed feature-hashed character trigrams of the name, formula and
    synonyms, L2-normalized over the hashed block.
    """
    if stats is None:
        stats = FeaturizerStats.identity()
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    vec[:NUMERIC_BLOCK] = (_numeric_fields(d) - stats.means) / stats.scales

    for text in (d.iupac_name, d.molecular_formula, *d.synonyms):
        for tok in _trigrams(text):
            h = int.from_bytes(
                hashlib.blake2b(tok.encode("utf-8"), digest_size=8, person=_HASH_PERSON).digest(),
                "little",
            )
            sign = 1.0 if (h >> 62) & 1 == 0 else -1.0
            vec[NUMERIC_BLOCK + (h % HASH_BLOCK)] += sign
    norm = np.linalg.norm(vec[NUMERIC_BLOCK:])
    if norm > 0:
        vec[NUMERIC_BLOCK:] /= norm
    return vec


class ProjectionHead:
    """Learnable affine map 768 -> d reducing the text embedding before
    fusion; participates in the global tape."""

    def __init__(self, weights: ad.Tensor, bias: ad.Tensor):
        if weights.data.ndim != 2 or weights.data.shape[0] != EMBED_DIM:
            raise ad.ShapeError(f"projection weights must be {EMBED_DIM}x d, got {weights.data.shape}")
        if bias.data.shape != (weights.data.shape[1],):
            raise ad.ShapeError(
                f"projection bias shape {bias.data.shape} does not match width {weights.data.shape[1]}"
            )
        self.weights = weights
        self.bias = bias

    @property
    def out_dim(self) -> int:
        return self.weights.data.shape[1]

    @classmethod
    def init(cls, d: int = 16, seed: int = 0) -> "ProjectionHead":
        if d < 1:
            raise ValueError(f"projection width must be >= 1, got {d}")
        rng = np.random.default_rng(seed)
        return cls(
            weights=ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(EMBED_DIM), size=(EMBED_DIM, d)), requires_grad=True),
            bias=ad.Tensor(np.zeros(d), requires_grad=True),
        )

    def named_params(self):
        return [("proj_w", self.weights), ("proj_b", self.bias)]


def project(t: ad.Tensor, head: ProjectionHead) -> ad.Tensor:
    """t_p = P(t): affine reduction, vector (768,) or batch (B,768) rows."""
    single = t.data.ndim == 1
    rows = ad.reshape(t, (1, t.data.shape[0])) if single else t
    if rows.data.shape[1] != EMBED_DIM:
        raise ad.ShapeError(f"project: expected width {EMBED_DIM}, got {rows.data.shape}")
    out = ad.add(ad.matmul(rows, head.weights), head.bias)
    return ad.reshape(out, (head.out_dim,)) if single else out
