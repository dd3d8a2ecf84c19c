"""Intent generation per screen and milestone decomposition."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import DecompositionError, ParseError
from .prompts import DECOMPOSE_SYSTEM, INTENT_SYSTEM, decompose_prompt, intents_prompt, parse_list
from .providers import ChatBackend, ChatRequest
from .utg import Utg

log = logging.getLogger(__name__)

DEFAULT_PER_SCREEN_LIMIT = 5


@dataclass(frozen=True)
class Intent:
    intent_id: str
    source_screen: str
    goal_text: str
    milestones: tuple[str, ...]
    reachable: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "milestones", tuple(self.milestones))
        if not self.goal_text.strip():
            raise ValueError("goal_text must be non-empty")
        if not self.milestones:
            raise ValueError("an intent needs at least one milestone")
        if len(set(self.milestones)) != len(self.milestones):
            raise ValueError("milestones must be pairwise distinct")

    @property
    def m(self) -> int:
        return len(self.milestones)

    def to_dict(self) -> dict:
        return {
            "intent_id": self.intent_id,
            "source_screen": self.source_screen,
            "goal_text": self.goal_text,
            "milestones": list(self.milestones),
            "reachable": self.reachable,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intent":
        try:
            return cls(str(d["intent_id"]), str(d["source_screen"]), str(d["goal_text"]),
                       tuple(d["milestones"]), bool(d.get("reachable", True)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad intent record: {exc}") from exc


def normalize_goal(text: str) -> str:
    return " ".join(re.findall(r"\w+", text.lower()))


def decompose_intent(goal_text: str, chat: ChatBackend) -> list[str]:
    """Ask the model for ordered milestones; order is kept exactly as produced."""
    if not goal_text.strip():
        raise ValueError("goal_text must be non-empty")
    reply = chat.chat(ChatRequest(DECOMPOSE_SYSTEM, decompose_prompt(goal_text)))
    items = [i.strip() for i in parse_list(reply) if i.strip()]
    if not items:
        raise DecompositionError("no milestones in response")
    seen: set[str] = set()
    out = []
    for item in items:
        # a repeated milestone would make in-order matching ambiguous
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def _screen_goals(utg: Utg, screen_id: str, limit: int, chat: ChatBackend) -> list[str]:
    screen = utg.screen(screen_id)
    reply = chat.chat(ChatRequest(INTENT_SYSTEM, intents_prompt(utg.meta.app_name, screen, limit)))
    if not reply.strip():
        log.warning("SkippedScreen: no intents proposed for %s", screen_id)
        return []
    try:
        goals = parse_list(reply)
    except DecompositionError:
        log.warning("SkippedScreen: unparseable intents for %s", screen_id)
        return []
    return [g.strip() for g in goals if g.strip()][:limit]


def generate_intents(utg: Utg, chat: ChatBackend, per_screen_limit: int = DEFAULT_PER_SCREEN_LIMIT,
                     workers: int = 1) -> list[Intent]:
    """Propose intents for every screen and decompose each one.

    Screens are visited in ``screen_id`` order and goals are deduplicated
    across the whole graph by normalized text, first occurrence wins. Intents
    from screens the entry screen cannot reach are kept with
    ``reachable=False``.
    """
    if per_screen_limit < 1:
        raise ValueError("per_screen_limit must be positive")
    ids = sorted(s.screen_id for s in utg.screens)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            proposals = list(pool.map(lambda s: _screen_goals(utg, s, per_screen_limit, chat), ids))
    else:
        proposals = [_screen_goals(utg, s, per_screen_limit, chat) for s in ids]

    reach = utg.reachable_from(utg.entry_screen) if utg.entry_screen in utg.screen_map else set()
    seen: set[str] = set()
    intents = []
    for sid, goals in zip(ids, proposals):
        n = 0
        for goal in goals:
            key = normalize_goal(goal)
            if not key or key in seen:
                continue
            seen.add(key)
            milestones = decompose_intent(goal, chat)
            intents.append(Intent(f"{sid}#{n}", sid, goal, tuple(milestones), sid in reach))
            n += 1
    return intents


def save_intents(intents: Iterable[Intent], path: str | Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(i.to_dict(), ensure_ascii=False) + "\n" for i in intents), encoding="utf-8")


def load_intents(path: str | Path) -> list[Intent]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(Intent.from_dict(json.loads(line)))
    return out
