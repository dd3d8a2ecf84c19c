"""Batched, threshold-pruned, top-K breadth-first search for intent trajectories.

Each iteration grows every frontier path by ``step_size`` transitions,
drops loops and duplicates, scores the candidates in batches, records the
ones whose milestone fraction clears ``threshold``, and keeps the best
``top_k`` candidates as the next frontier.
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import ParseError, ProviderError, SearchInterrupted, TransportError, UnsupportedError
from .intents import Intent
from .prompts import SUMMARY_SYSTEM, score_prompt, summary_prompt
from .providers import ChatBackend, ChatRequest, LogitBackend, LogitRequest, digit_answers
from .scoring import TrajectoryScore, rank_key, trajectory_score
from .utg import Trajectory, Utg

log = logging.getLogger(__name__)

Scorer = Callable[[Intent, Trajectory], TrajectoryScore]


@dataclass(frozen=True)
class SearchConfig:
    threshold: float = 1.0
    step_size: int = 1
    max_depth: int = 10
    top_k: int | None = 5  # None keeps every candidate
    batch_size: int = 8
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.step_size < 1 or self.max_depth < 1 or self.batch_size < 1 or self.workers < 1:
            raise ValueError("step_size, max_depth, batch_size and workers must be positive")
        if self.step_size > self.max_depth:
            raise ValueError("step_size may not exceed max_depth")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be positive")


@dataclass
class SearchFrontier:
    entries: list[Trajectory]
    depth: int = 0


@dataclass(frozen=True)
class ScoredTrajectory:
    trajectory: Trajectory
    score: TrajectoryScore

    @property
    def rank_key(self) -> tuple:
        return rank_key(self.score, len(self.trajectory), self.trajectory.path_id)


class LlmScorer:
    """Scores a trajectory by asking a logit backend how many milestones it completes."""

    def __init__(self, backend: LogitBackend, utg: Utg, temperature: float = 1.0):
        self.backend = backend
        self.utg = utg
        self.temperature = temperature
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, intent: Intent, t: Trajectory) -> TrajectoryScore:
        with self._lock:
            self.calls += 1
        prompt = score_prompt(intent.goal_text, intent.milestones, t, self.utg)
        logits = self.backend.score_logits(LogitRequest(prompt, digit_answers(intent.m)))
        return trajectory_score(logits, intent.m, self.temperature)


def expand_frontier(frontier: SearchFrontier, utg: Utg, step_size: int) -> list[Trajectory]:
    """Extend each frontier path by ``step_size`` loop-free transitions.

    A branch that dead-ends after at least one new transition is emitted
    short. Identical step sequences are emitted once, first occurrence first.
    """
    out: list[Trajectory] = []
    seen: set[str] = set()

    def emit(t: Trajectory) -> None:
        if t.path_id not in seen:
            seen.add(t.path_id)
            out.append(t)

    def grow(t: Trajectory, visited: frozenset, remaining: int, added: int) -> None:
        if remaining == 0:
            emit(t)
            return
        nexts = [tr for tr in utg.outgoing(t.end) if tr.dst not in visited]
        if not nexts:
            if added:
                emit(t)
            return
        for tr in nexts:
            grow(t.extend(tr), visited | {tr.dst}, remaining - 1, added + 1)

    for entry in frontier.entries:
        grow(entry, frozenset(entry.screens), step_size, 0)
    return out


def _chunks(items: Sequence, size: int) -> Iterable[Sequence]:
    for i in range(0, len(items), size):
        yield items[i:i + size]


def llm_bfs_search(intent: Intent, utg: Utg, start: str, cfg: SearchConfig, scorer: Scorer,
                   resume: SearchFrontier | None = None,
                   resume_valid: Sequence[ScoredTrajectory] = ()) -> list[ScoredTrajectory]:
    """Return every trajectory whose milestone fraction reached ``cfg.threshold``.

    Results are ordered best first. Depth counts transitions. Valid paths stay
    in the frontier and may keep growing. A provider failure raises
    SearchInterrupted holding the frontier and results so far; pass them back
    through ``resume``/``resume_valid`` to continue.
    """
    if start not in utg.screen_map:
        raise KeyError(f"unknown start screen {start!r}")
    frontier = resume or SearchFrontier([Trajectory(start)], 0)
    valid = list(resume_valid)
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while frontier.entries and frontier.depth < cfg.max_depth:
            step = min(cfg.step_size, cfg.max_depth - frontier.depth)
            candidates = expand_frontier(frontier, utg, step)
            scored: list[ScoredTrajectory] = []
            settled = len(valid)  # hits from this iteration are redone on resume
            for batch in _chunks(candidates, cfg.batch_size):
                try:
                    if pool is not None:
                        scores = list(pool.map(lambda t: scorer(intent, t), batch))
                    else:
                        scores = [scorer(intent, t) for t in batch]
                except ProviderError as exc:
                    raise SearchInterrupted(exc, frontier.depth, list(frontier.entries),
                                            sorted(valid[:settled], key=lambda s: s.rank_key)) from exc
                for t, s in zip(batch, scores):
                    st = ScoredTrajectory(t, s)
                    scored.append(st)
                    if s.progress_count / intent.m >= cfg.threshold:
                        valid.append(st)
            scored.sort(key=lambda s: s.rank_key)
            kept = scored if cfg.top_k is None else scored[:cfg.top_k]
            frontier = SearchFrontier([s.trajectory for s in kept], frontier.depth + step)
    finally:
        if pool is not None:
            pool.shutdown()
    valid.sort(key=lambda s: s.rank_key)
    return valid


def search_intents(intents: Sequence[Intent], utg: Utg, start: str, cfg: SearchConfig,
                   scorer: Scorer, workers: int = 1) -> dict[str, list[ScoredTrajectory]]:
    """Search several intents over the same graph; keyed by intent_id."""
    def run(intent: Intent) -> list[ScoredTrajectory]:
        return llm_bfs_search(intent, utg, start, cfg, scorer)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            found = list(pool.map(run, intents))
    else:
        found = [run(i) for i in intents]
    return {i.intent_id: r for i, r in zip(intents, found)}


# --- summaries -----------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    text: str
    fallback: bool = False


def mechanical_summary(t: Trajectory, utg: Utg) -> str:
    clauses = []
    for s in t.steps:
        src = utg.screen(s.screen_id)
        w = src.widget(s.widget_id)
        clauses.append(f"{s.action.verb()} '{w.description if w else s.widget_id}' on {src.title}")
    text = ", then ".join(clauses)
    return text[0].upper() + text[1:] + "."


def _mentions_in_order(text: str, needles: Sequence[str]) -> bool:
    low, pos = text.lower(), 0
    for n in needles:
        found = low.find(n.lower(), pos)
        if found < 0:
            return False
        pos = found + len(n)
    return True


def summarize_trajectory(t: Trajectory, utg: Utg, chat: ChatBackend | None) -> Summary:
    """One-paragraph description naming each step's widget in order.

    Falls back to a mechanical template (flagged) when the backend is
    unreachable or its answer skips a widget.
    """
    if not t.steps:
        raise ValueError("cannot summarize an empty trajectory")
    widgets = []
    for s in t.steps:
        w = utg.screen(s.screen_id).widget(s.widget_id)
        widgets.append(w.description if w else s.widget_id)
    if chat is not None:
        try:
            text = chat.chat(ChatRequest(SUMMARY_SYSTEM, summary_prompt(t, utg)))
        except (TransportError, UnsupportedError) as exc:
            log.warning("summary backend unavailable, using template: %s", exc)
        else:
            text = " ".join(text.split())
            if text and _mentions_in_order(text, widgets):
                return Summary(text, False)
            log.warning("summary omitted some steps, using template")
    return Summary(mechanical_summary(t, utg), True)


# --- persisted search results --------------------------------------------


@dataclass(frozen=True)
class SearchRecord:
    intent_id: str
    trajectory: Trajectory
    score: TrajectoryScore
    summary: str
    fallback: bool
    rank: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "intent_id": self.intent_id,
            "rank": self.rank,
            "start": self.trajectory.start,
            "steps": [s.to_dict() for s in self.trajectory.steps],
            **self.score.to_dict(),
            "summary": self.summary,
            "fallback": self.fallback,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchRecord":
        try:
            traj = Trajectory.from_dict({"start": d["start"], "steps": d["steps"]})
            return cls(str(d["intent_id"]), traj, TrajectoryScore.from_dict(d), str(d["summary"]),
                       bool(d["fallback"]), int(d.get("rank", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad search record: {exc}") from exc


def save_records(records: Iterable[SearchRecord], path: str | Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records), encoding="utf-8")


def load_records(path: str | Path) -> list[SearchRecord]:
    return [SearchRecord.from_dict(json.loads(ln))
            for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
