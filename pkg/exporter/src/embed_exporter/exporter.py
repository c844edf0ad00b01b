"""Run a pretrained text encoder over rendered molecule descriptions and
write the molfuse embedding file format.

The output contract (shared with the training pipeline): one JSON record
per line with keys cid, text_sha256 (over the exact input string) and a
768-float vector; a leading '#' header line records the model identifier
and which activation was extracted. Inference runs single-threaded in eval
mode, so a pinned model reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

log = logging.getLogger(__name__)

EMBED_DIM = 768
_UNSET_MAX_LENGTH = int(1e12)  # tokenizers report huge sentinels when unset


class ExportError(Exception):
    pass


@dataclass
class ExportJob:
    manifest_path: str       # JSONL: {"cid": int, "description": str} per line
    model_id: str            # HF identifier or local model directory
    output_path: str
    batch_size: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ExportError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class ExportResult:
    n_records: int
    truncated_cids: list = field(default_factory=list)
    extraction: str = ""


def load_manifest(path):
    """Parse the description manifest into [(cid, text)] in file order."""
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append((int(obj["cid"]), str(obj["description"])))
        except (KeyError, ValueError, TypeError) as err:
            raise ExportError(f"{path}:{line_no}: malformed manifest record ({err})") from None
    return records


class TextEncoder:
    """Wraps a HuggingFace text model behind one encode() call.

    Extraction point: for CLIP checkpoints the text tower's pooled output;
    otherwise the model's pooled output when it has one, else masked mean
    pooling of the last hidden state. The choice is recorded in the output
    header because downstream only sees an opaque 768-vector.
    """

    def __init__(self, model_id: str):
        self.model_id = model_id
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
        model.eval()
        if hasattr(model, "text_model") and hasattr(model, "get_text_features"):
            self.model = model.text_model
            self.extraction = "clip-text-pooled"
        else:
            self.model = model
            self.extraction = "pooled" if hasattr(model, "pooler") and model.pooler is not None \
                else "mean-pooled"
        limit = getattr(self.tokenizer, "model_max_length", None) or _UNSET_MAX_LENGTH
        positions = getattr(self.model.config, "max_position_embeddings", _UNSET_MAX_LENGTH)
        self.max_tokens = min(int(limit), int(positions))
        if self.max_tokens >= _UNSET_MAX_LENGTH:
            self.max_tokens = 512

    def over_limit(self, texts):
        """Indices of texts whose tokenization exceeds the model limit."""
        encoded = self.tokenizer(list(texts))
        return [i for i, ids in enumerate(encoded["input_ids"]) if len(ids) > self.max_tokens]

    @torch.no_grad()
    def encode(self, texts) -> np.ndarray:
        encoded = self.tokenizer(
            list(texts), return_tensors="pt", padding=True,
            truncation=True, max_length=self.max_tokens,
        )
        output = self.model(**encoded)
        pooled = getattr(output, "pooler_output", None)
        if pooled is None:
            mask = encoded["attention_mask"].unsqueeze(-1).to(output.last_hidden_state.dtype)
            summed = (output.last_hidden_state * mask).sum(dim=1)
            pooled = summed / mask.sum(dim=1).clamp(min=1.0)
        return pooled.to(torch.float64).cpu().numpy()


def export(job: ExportJob) -> ExportResult:
    """One embedding record per manifest line, written in input order.

    Texts beyond the model's token limit are truncated and flagged in a
    sidecar log next to the output file.
    """
    records = load_manifest(job.manifest_path)
    torch.set_num_threads(1)  # bitwise-reproducible reductions
    encoder = TextEncoder(job.model_id)

    truncated = []
    out_path = Path(job.output_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(
            f"# model={encoder.model_id} extraction={encoder.extraction} "
            f"dim={EMBED_DIM} max_tokens={encoder.max_tokens}\n"
        )
        for start in range(0, len(records), job.batch_size):
            batch = records[start:start + job.batch_size]
            texts = [text for _, text in batch]
            for offset in encoder.over_limit(texts):
                truncated.append(batch[offset][0])
            vectors = encoder.encode(texts)
            if vectors.shape[1] != EMBED_DIM:
                raise ExportError(
                    f"model {job.model_id} produces {vectors.shape[1]}-dim vectors, "
                    f"the pipeline contract requires {EMBED_DIM}"
                )
            for (cid, text), vec in zip(batch, vectors):
                fh.write(json.dumps({
                    "cid": cid,
                    "text_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
                    "vector": [float(v) for v in vec],
                }) + "\n")

    if truncated:
        sidecar = out_path.with_suffix(out_path.suffix + ".log")
        sidecar.write_text(
            "".join(f"truncated cid {cid} to {encoder.max_tokens} tokens\n" for cid in truncated),
            encoding="utf-8",
        )
        log.warning("%d descriptions exceeded the token limit; see %s", len(truncated), sidecar)
    return ExportResult(n_records=len(records), truncated_cids=truncated,
                        extraction=encoder.extraction)
