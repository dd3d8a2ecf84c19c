"""Intent-trajectory knowledge base with exact cosine top-K retrieval.

On disk a database is one header line followed by one JSON entry per line::

    {"checksum": "<16 hex>", "dimension": 64, "entry_count": N, "format_version": 1,
     "index": null, "model_id": "..."}
    {"entry_id": ..., "key": [...], ...}

``checksum`` is 64-bit FNV-1a over the UTF-8 bytes of all entry lines,
newlines included. ``index`` is reserved for approximate-index metadata.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorruptionError, DimensionMismatch, ModelMismatch, VersionError
from .intents import Intent
from .pathfinder import SearchRecord
from .providers import Embedder, EmbeddingVector
from .utg import Trajectory, Utg

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
KEY_SEPARATOR = " | "
KEY_MODES = ("intent", "intent+summary")
DEFAULT_KEY_MODE = "intent"
# Cosines closer than this count as tied; rounding can split exact ties by an ulp.
TIE_TOLERANCE = 1e-12

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class KnowledgeEntry:
    entry_id: str
    intent_text: str
    milestones: tuple[str, ...]
    trajectory: Trajectory
    summary: str
    key: EmbeddingVector
    app_id: str

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "app_id": self.app_id,
            "intent_text": self.intent_text,
            "milestones": list(self.milestones),
            "trajectory": self.trajectory.to_dict(),
            "summary": self.summary,
            "key": list(self.key.values),
        }

    @classmethod
    def from_dict(cls, d: Mapping, model_id: str) -> "KnowledgeEntry":
        return cls(
            str(d["entry_id"]), str(d["intent_text"]), tuple(d["milestones"]),
            Trajectory.from_dict(d["trajectory"]), str(d["summary"]),
            EmbeddingVector(tuple(d["key"]), model_id), str(d["app_id"]),
        )


@dataclass(frozen=True)
class KnowledgeDb:
    model_id: str
    dimension: int
    entries: tuple[KnowledgeEntry, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        ids = set()
        for e in self.entries:
            if e.key.dimension != self.dimension:
                raise DimensionMismatch(f"entry {e.entry_id} has dimension {e.key.dimension}")
            if e.entry_id in ids:
                raise ValueError(f"duplicate entry_id {e.entry_id!r}")
            ids.add(e.entry_id)

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def _matrix(self) -> tuple[np.ndarray, np.ndarray]:
        keys = np.array([e.key.values for e in self.entries], dtype=float).reshape(-1, self.dimension)
        return keys, np.linalg.norm(keys, axis=1)


@dataclass(frozen=True)
class RetrievalHit:
    entry: KnowledgeEntry
    similarity: float


def key_text(intent_text: str, summary: str, mode: str = DEFAULT_KEY_MODE) -> str:
    if mode == "intent":
        return intent_text
    if mode == "intent+summary":
        return f"{intent_text}{KEY_SEPARATOR}{summary}"
    raise ValueError(f"unknown key mode {mode!r}; expected one of {KEY_MODES}")


def build_db(intents: Sequence[Intent], results: Iterable[SearchRecord], embedder: Embedder,
             app_id: str = "app", key_mode: str = DEFAULT_KEY_MODE,
             utg: Utg | None = None) -> KnowledgeDb:
    """One entry per intent, from its best-ranked search record.

    ``key_mode`` picks the embedded text: the intent alone, or the intent
    followed by the trajectory summary.

    Intents with no record are skipped with a warning. When ``utg`` is given
    every stored trajectory is checked against it.
    """
    best: dict[str, SearchRecord] = {}
    for rec in results:
        cur = best.get(rec.intent_id)
        if cur is None or rec.rank < cur.rank:
            best[rec.intent_id] = rec
    known = {i.intent_id for i in intents}
    unknown = sorted(set(best) - known)
    if unknown:
        raise ValueError(f"search results reference unknown intents: {unknown[:5]}")

    entries = []
    dim = None
    for intent in intents:
        rec = best.get(intent.intent_id)
        if rec is None:
            log.warning("no valid trajectory for intent %s (%r); omitted", intent.intent_id, intent.goal_text)
            continue
        if utg is not None:
            bad = rec.trajectory.problems(utg)
            if bad:
                raise ValueError(f"trajectory for {intent.intent_id} is invalid: {bad[0]}")
        key = embedder.embed(key_text(intent.goal_text, rec.summary, key_mode))
        if dim is None:
            dim = key.dimension
        elif key.dimension != dim:
            raise DimensionMismatch(f"embedder returned dimension {key.dimension}, expected {dim}")
        entries.append(KnowledgeEntry(
            f"{app_id}:{intent.intent_id}", intent.goal_text, intent.milestones,
            rec.trajectory, rec.summary, key, app_id,
        ))
    dimension = dim or embedder.dimension or embedder.embed("dimension probe").dimension
    return KnowledgeDb(embedder.model_id, dimension, tuple(entries))


def _rank(db: KnowledgeDb, q: np.ndarray) -> list[RetrievalHit]:
    keys, norms = db._matrix
    sims = (keys @ q) / (norms * np.linalg.norm(q))
    desc = np.argsort(-sims, kind="stable")
    order: list[int] = []
    group: list[int] = []
    for i in desc:
        # consecutive scores within tolerance form one tie group, ordered by entry_id
        if group and sims[group[-1]] - sims[i] > TIE_TOLERANCE:
            order += sorted(group, key=lambda j: db.entries[j].entry_id)
            group = []
        group.append(int(i))
    order += sorted(group, key=lambda j: db.entries[j].entry_id)
    return [RetrievalHit(db.entries[i], float(sims[i])) for i in order]


def query(db: KnowledgeDb, instruction: str, k: int, embedder: Embedder) -> list[RetrievalHit]:
    """Exact top-``k`` entries by cosine similarity; ties go to the smaller entry_id.

    Scores within ``TIE_TOLERANCE`` of their neighbour in the ranking are ties.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if embedder.model_id != db.model_id:
        raise ModelMismatch(f"database built with {db.model_id!r}, query uses {embedder.model_id!r}")
    if not db.entries:
        return []
    q = np.asarray(embedder.embed(instruction).values, dtype=float)
    if q.shape[0] != db.dimension:
        raise DimensionMismatch(f"query dimension {q.shape[0]} != {db.dimension}")
    return _rank(db, q)[:k]


def query_many(dbs: Sequence[KnowledgeDb], instruction: str, k: int,
               embedder: Embedder) -> list[RetrievalHit]:
    """Merge per-database rankings by similarity (ties by entry_id)."""
    hits = [h for db in dbs for h in query(db, instruction, k, embedder)]
    hits.sort(key=lambda h: -h.similarity)
    merged: list[RetrievalHit] = []
    group: list[RetrievalHit] = []
    for h in hits:
        if group and group[-1].similarity - h.similarity > TIE_TOLERANCE:
            merged += sorted(group, key=lambda g: g.entry.entry_id)
            group = []
        group.append(h)
    merged += sorted(group, key=lambda g: g.entry.entry_id)
    return merged[:k]


# --- persistence ---------------------------------------------------------


def dumps_db(db: KnowledgeDb) -> bytes:
    lines = [
        (json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) + "\n").encode("utf-8")
        for e in db.entries
    ]
    h = _FNV_OFFSET
    for ln in lines:
        h = fnv1a64(ln, h)
    header = {
        "format_version": FORMAT_VERSION,
        "model_id": db.model_id,
        "dimension": db.dimension,
        "entry_count": len(lines),
        "checksum": f"{h:016x}",
        "index": None,
    }
    return (json.dumps(header, sort_keys=True) + "\n").encode("utf-8") + b"".join(lines)


def loads_db(data: bytes) -> KnowledgeDb:
    head, sep, body = data.partition(b"\n")
    try:
        header = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptionError(f"unreadable header: {exc}") from exc
    if not sep or not isinstance(header, dict):
        raise CorruptionError("missing header line")
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format_version {version!r}")
    try:
        model_id = str(header["model_id"])
        dimension = int(header["dimension"])
        count = int(header["entry_count"])
        checksum = int(str(header["checksum"]), 16)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptionError(f"bad header: {exc}") from exc
    lines = body.splitlines(keepends=True)
    if len(lines) != count or (lines and not lines[-1].endswith(b"\n")):
        raise CorruptionError(f"expected {count} complete entry lines, found {len(lines)}")
    h = _FNV_OFFSET
    for ln in lines:
        h = fnv1a64(ln, h)
    if h != checksum:
        raise CorruptionError("checksum mismatch")
    try:
        entries = tuple(KnowledgeEntry.from_dict(json.loads(ln), model_id) for ln in lines)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptionError(f"bad entry: {exc}") from exc
    return KnowledgeDb(model_id, dimension, entries)


def save_db(db: KnowledgeDb, path: str | Path) -> None:
    Path(path).write_bytes(dumps_db(db))


def load_db(path: str | Path) -> KnowledgeDb:
    return loads_db(Path(path).read_bytes())


def load_dbs(path: str | Path, pattern: str = "*.kgdb") -> list[KnowledgeDb]:
    """A single database file, or every matching file in a directory (sorted)."""
    p = Path(path)
    if p.is_dir():
        return [load_db(f) for f in sorted(p.glob(pattern))]
    return [load_db(p)]
