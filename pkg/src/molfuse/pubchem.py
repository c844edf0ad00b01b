"""PubChem PUG REST client: CID resolution and descriptor retrieval with an
on-disk snapshot cache, a sliding-window rate limiter, and negative caching
so reruns are stable and fully offline once warm.

Misses are values, not errors: a molecule without a PubChem record is
excluded from the multimodal dataset with a reason code.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import deque
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

import requests

from . import __version__

log = logging.getLogger(__name__)

PUG_BASE = "https://pubchem.ncbi.nlm.nih.gov/rest/pug"
CONTACT_ENV_VAR = "MOLFUSE_PUBCHEM_CONTACT"
SYNONYM_CAP = 20
DEFAULT_RATE_LIMIT = 5.0  # requests per second, per PubChem usage policy

PROPERTY_FIELDS = (
    "IUPACName,MolecularFormula,MolecularWeight,XLogP,HBondDonorCount,"
    "HBondAcceptorCount,RotatableBondCount,TPSA,Charge"
)


class PubChemError(Exception):
    """Base for client failures."""


class NetworkError(PubChemError):
    """Transport-level failure; retryable, distinct from NotFound."""


class RateLimitExhausted(PubChemError):
    """Server throttled past the bounded retry budget."""


class IncompleteRecordError(PubChemError):
    """Response is missing a required descriptor field; the molecule is
    treated as excluded."""


class _NotFound:
    """Sentinel: the structure has no PubChem record (a value, not an error)."""

    def __repr__(self):
        return "NOT_FOUND"

    def __bool__(self):
        return False


NOT_FOUND = _NotFound()


@dataclass
class TextDescriptors:
    """The descriptor set fetched per compound, plus provenance."""

    cid: int
    iupac_name: str
    molecular_formula: str
    molecular_weight: float
    xlogp: float | None
    hbond_donors: int
    hbond_acceptors: int
    rotatable_bonds: int
    tpsa: float
    formal_charge: int
    synonyms: list = field(default_factory=list)
    fetched_at: str = ""
    source_url: str = ""

    def __post_init__(self):
        if self.cid <= 0:
            raise ValueError(f"cid must be positive, got {self.cid}")
        if self.molecular_weight <= 0:
            raise ValueError(f"molecular weight must be positive, got {self.molecular_weight}")
        for name in ("hbond_donors", "hbond_acceptors", "rotatable_bonds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.tpsa < 0:
            raise ValueError(f"tpsa must be nonnegative, got {self.tpsa}")
        # Deduplicate, keep first-seen order, cap.
        seen, deduped = set(), []
        for s in self.synonyms:
            if s not in seen:
                seen.add(s)
                deduped.append(s)
        self.synonyms = deduped[:SYNONYM_CAP]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TextDescriptors":
        return cls(**d)


def render_description(d: TextDescriptors) -> str:
    """Deterministic single-line text rendered from a descriptor record;
    this string is what the text embedder consumes. Absent fields are N/A,
    field order is fixed."""
    def num(v):
        return "N/A" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))

    synonyms = ", ".join(d.synonyms) if d.synonyms else "N/A"
    return (
        f"IUPAC name: {d.iupac_name or 'N/A'}. "
        f"Formula: {d.molecular_formula or 'N/A'}. "
        f"Molecular weight: {num(d.molecular_weight)}. "
        f"XLogP: {num(d.xlogp)}. "
        f"H-bond donors: {num(d.hbond_donors)}. "
        f"H-bond acceptors: {num(d.hbond_acceptors)}. "
        f"Rotatable bonds: {num(d.rotatable_bonds)}. "
        f"TPSA: {num(d.tpsa)}. "
        f"Formal charge: {num(d.formal_charge)}. "
        f"Synonyms: {synonyms}."
    )


class SnapshotCache:
    """One record file per key under a pinned directory.

    Files hold a single line of structured UTF-8 text (JSON). Misses are
    cached too (negative caching, infinite TTL) so a warm snapshot replays
    identically offline.
    """

    def __init__(self, cache_dir):
        self.dir = Path(cache_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        digest = hashlib.sha256(key.encode("utf-8")).hexdigest()
        return self.dir / f"{digest}.json"

    def get(self, key: str):
        path = self._path(key)
        if not path.exists():
            return None
        record = json.loads(path.read_text(encoding="utf-8").splitlines()[0])
        if record.get("key") != key:
            raise PubChemError(f"cache file {path.name} does not match key {key!r}")
        return record

    def put(self, key: str, kind: str, payload) -> None:
        record = {"key": key, "kind": kind, "payload": payload}
        self._path(key).write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")

    def snapshot_id(self) -> str:
        """Content hash over the sorted cache files; identifies a snapshot."""
        h = hashlib.sha256()
        for path in sorted(self.dir.glob("*.json")):
            h.update(path.name.encode())
            h.update(path.read_bytes())
        return h.hexdigest()


class RateLimiter:
    """Sliding-window limiter: at most `ceiling` sends in any 1-second
    window, enforced by sleeping until the oldest send leaves the window."""

    def __init__(self, ceiling: float = DEFAULT_RATE_LIMIT, time_fn=time.monotonic, sleep_fn=time.sleep):
        if ceiling <= 0:
            raise ValueError(f"rate ceiling must be positive, got {ceiling}")
        self.ceiling = int(ceiling)
        self._time = time_fn
        self._sleep = sleep_fn
        self._sent = deque()

    def acquire(self) -> None:
        now = self._time()
        while self._sent and now - self._sent[0] >= 1.0:
            self._sent.popleft()
        if len(self._sent) >= self.ceiling:
            wait = self._sent[0] + 1.0 - now
            if wait > 0:
                self._sleep(wait)
            now = self._time()
            while self._sent and now - self._sent[0] >= 1.0:
                self._sent.popleft()
        self._sent.append(self._time())


class RequestsTransport:
    """Default HTTP transport; kept swappable so tests can replay fixtures."""

    def __init__(self, timeout: float = 30.0):
        self.session = requests.Session()
        self.timeout = timeout

    def __call__(self, method: str, url: str, data=None, headers=None):
        try:
            resp = self.session.request(method, url, data=data, headers=headers, timeout=self.timeout)
        except requests.RequestException as err:
            raise NetworkError(f"{method} {url}: {err}") from err
        return resp.status_code, resp.text


class PubChemClient:
    """Resolve structures to CIDs and fetch the descriptor set, cache-first."""

    def __init__(
        self,
        cache_dir,
        rate_limit: float = DEFAULT_RATE_LIMIT,
        contact: str | None = None,
        transport=None,
        max_retries: int = 5,
        time_fn=time.monotonic,
        sleep_fn=time.sleep,
    ):
        self.cache = SnapshotCache(cache_dir)
        self.limiter = RateLimiter(rate_limit, time_fn=time_fn, sleep_fn=sleep_fn)
        self.transport = transport if transport is not None else RequestsTransport()
        self.max_retries = max_retries
        self._sleep = sleep_fn
        self.request_count = 0  # network sends, cache hits excluded
        contact = contact if contact is not None else os.environ.get(CONTACT_ENV_VAR, "")
        agent = f"molfuse/{__version__}"
        if contact:
            agent += f" ({contact})"
        self.headers = {"User-Agent": agent}

    # ------------------------------------------------------------ transport

    def _request(self, method: str, url: str, data=None):
        """One HTTP exchange with throttle-aware bounded retries."""
        backoff = 1.0
        for attempt in range(self.max_retries + 1):
            self.limiter.acquire()
            self.request_count += 1
            try:
                status, body = self.transport(method, url, data=data, headers=self.headers)
            except NetworkError:
                if attempt == self.max_retries:
                    raise
                self._sleep(backoff)
                backoff *= 2.0
                continue
            if status in (429, 503):
                if attempt == self.max_retries:
                    raise RateLimitExhausted(
                        f"{url}: server throttled {attempt + 1} times; retry budget exhausted"
                    )
                self._sleep(backoff)
                backoff *= 2.0
                continue
            return status, body
        raise NetworkError(f"{url}: retry loop exhausted")  # pragma: no cover

    # ------------------------------------------------------------ resolve

    def resolve_cid(self, structure_key: str):
        """Exact-structure CID for an InChI or SMILES key; NOT_FOUND if the
        structure has no record."""
        if not structure_key or not structure_key.strip():
            raise ValueError("structure key must be a nonempty InChI or SMILES string")
        cache_key = f"cid:{structure_key}"
        cached = self.cache.get(cache_key)
        if cached is not None:
            return NOT_FOUND if cached["payload"] is None else int(cached["payload"])

        namespace = "inchi" if structure_key.startswith("InChI=") else "smiles"
        url = f"{PUG_BASE}/compound/{namespace}/cids/JSON"
        status, body = self._request("POST", url, data={namespace: structure_key})
        if status == 404:
            self.cache.put(cache_key, "cid", None)
            return NOT_FOUND
        if status != 200:
            raise NetworkError(f"{url}: unexpected HTTP {status}")
        cids = json.loads(body).get("IdentifierList", {}).get("CID", [])
        if not cids or cids[0] == 0:
            self.cache.put(cache_key, "cid", None)
            return NOT_FOUND
        cid = int(cids[0])
        self.cache.put(cache_key, "cid", cid)
        return cid

    # ------------------------------------------------------------ descriptors

    def fetch_descriptors(self, cid: int) -> TextDescriptors:
        """Property table plus synonyms for one CID. XLogP may legitimately
        be absent; any other missing field raises IncompleteRecordError."""
        if cid <= 0:
            raise ValueError(f"cid must be positive, got {cid}")
        cache_key = f"desc:{cid}"
        cached = self.cache.get(cache_key)
        if cached is not None:
            if cached["payload"] is None:
                raise IncompleteRecordError(f"cid {cid}: cached as incomplete")
            return TextDescriptors.from_dict(cached["payload"])

        prop_url = f"{PUG_BASE}/compound/cid/{cid}/property/{PROPERTY_FIELDS}/JSON"
        status, body = self._request("GET", prop_url)
        if status != 200:
            raise NetworkError(f"{prop_url}: unexpected HTTP {status}")
        try:
            props = json.loads(body)["PropertyTable"]["Properties"][0]
        except (KeyError, IndexError, json.JSONDecodeError) as err:
            raise IncompleteRecordError(f"cid {cid}: malformed property table") from err

        required = (
            "IUPACName", "MolecularFormula", "MolecularWeight",
            "HBondDonorCount", "HBondAcceptorCount", "RotatableBondCount",
            "TPSA", "Charge",
        )
        missing = [k for k in required if k not in props]
        if missing:
            self.cache.put(cache_key, "descriptors", None)
            raise IncompleteRecordError(f"cid {cid}: response missing {', '.join(missing)}")

        syn_url = f"{PUG_BASE}/compound/cid/{cid}/synonyms/JSON"
        status, body = self._request("GET", syn_url)
        if status == 200:
            info = json.loads(body).get("InformationList", {}).get("Information", [])
            synonyms = list(info[0].get("Synonym", [])) if info else []
        elif status == 404:
            synonyms = []  # compounds without any synonym list exist
        else:
            raise NetworkError(f"{syn_url}: unexpected HTTP {status}")

        descriptors = TextDescriptors(
            cid=cid,
            iupac_name=str(props["IUPACName"]),
            molecular_formula=str(props["MolecularFormula"]),
            molecular_weight=float(props["MolecularWeight"]),
            xlogp=float(props["XLogP"]) if "XLogP" in props else None,
            hbond_donors=int(props["HBondDonorCount"]),
            hbond_acceptors=int(props["HBondAcceptorCount"]),
            rotatable_bonds=int(props["RotatableBondCount"]),
            tpsa=float(props["TPSA"]),
            formal_charge=int(props["Charge"]),
            synonyms=synonyms,
            fetched_at=datetime.now(timezone.utc).isoformat(),
            source_url=prop_url,
        )
        self.cache.put(cache_key, "descriptors", descriptors.to_dict())
        return descriptors


@dataclass
class Exclusion:
    molecule_id: str
    reason: str  # not-found | incomplete | network-exhausted


def build_multimodal_manifest(molecules, client: PubChemClient):
    """Partition molecules into (included, excluded) by descriptor
    availability; only molecules with a full descriptor record are included.

    Returns (included: list of (molecule, TextDescriptors),
    excluded: list of Exclusion)."""
    included, excluded = [], []
    for mol in molecules:
        key = mol.inchi or mol.smiles
        try:
            cid = client.resolve_cid(key)
            if cid is NOT_FOUND:
                excluded.append(Exclusion(mol.id, "not-found"))
                continue
            included.append((mol, client.fetch_descriptors(cid)))
        except IncompleteRecordError:
            excluded.append(Exclusion(mol.id, "incomplete"))
        except (RateLimitExhausted, NetworkError):
            excluded.append(Exclusion(mol.id, "network-exhausted"))
    log.info("multimodal manifest: %d included, %d excluded", len(included), len(excluded))
    return included, excluded
