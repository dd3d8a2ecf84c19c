"""Offline build: intents -> milestones -> search -> summaries -> knowledge base."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .intents import DEFAULT_PER_SCREEN_LIMIT, Intent, generate_intents
from .knowledge import DEFAULT_KEY_MODE, KnowledgeDb, build_db
from .pathfinder import LlmScorer, SearchConfig, SearchRecord, llm_bfs_search, summarize_trajectory
from .providers import ChatBackend, Embedder, LogitBackend
from .utg import Utg

log = logging.getLogger(__name__)


class StageError(Exception):
    """A build stage failed; ``partial`` holds what completed before it."""

    def __init__(self, stage: str, cause: BaseException, partial: "BuildResult"):
        self.stage = stage
        self.cause = cause
        self.partial = partial
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class BuildResult:
    intents: list[Intent] = field(default_factory=list)
    records: list[SearchRecord] = field(default_factory=list)
    db: KnowledgeDb | None = None
    stats: dict = field(default_factory=dict)


def build_knowledge(utg: Utg, chat: ChatBackend, logits: LogitBackend, embedder: Embedder,
                    cfg: SearchConfig | None = None, *,
                    per_screen_limit: int = DEFAULT_PER_SCREEN_LIMIT, keep_per_intent: int = 1,
                    key_mode: str = DEFAULT_KEY_MODE, reachable_only: bool = True,
                    temperature: float = 1.0) -> BuildResult:
    """Run every offline stage; searches start at the graph's entry screen.

    ``keep_per_intent`` valid trajectories are summarized and recorded per
    intent; the database keeps the best one.
    """
    cfg = cfg or SearchConfig()
    out = BuildResult()
    stage = "intents"
    try:
        out.intents = generate_intents(utg, chat, per_screen_limit)
        out.stats["intents"] = len(out.intents)

        stage = "search"
        scorer = LlmScorer(logits, utg, temperature)
        found = {}
        for intent in out.intents:
            if reachable_only and not intent.reachable:
                found[intent.intent_id] = []
                continue
            found[intent.intent_id] = llm_bfs_search(intent, utg, utg.entry_screen, cfg, scorer)
        out.stats["searched"] = sum(1 for i in out.intents if not reachable_only or i.reachable)
        out.stats["scorer_calls"] = scorer.calls
        out.stats["intents_with_trajectory"] = sum(1 for v in found.values() if v)

        stage = "summarize"
        fallbacks = 0
        for intent in out.intents:
            for rank, st in enumerate(found[intent.intent_id][:keep_per_intent]):
                summary = summarize_trajectory(st.trajectory, utg, chat)
                fallbacks += summary.fallback
                out.records.append(SearchRecord(intent.intent_id, st.trajectory, st.score,
                                                summary.text, summary.fallback, rank))
        out.stats["records"] = len(out.records)
        out.stats["summary_fallbacks"] = fallbacks

        stage = "embed"
        out.db = build_db(out.intents, out.records, embedder, utg.meta.product_id, key_mode, utg)
        out.stats["entries"] = len(out.db)
    except Exception as exc:
        raise StageError(stage, exc, out) from exc
    return out
