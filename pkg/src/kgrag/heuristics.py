"""Deterministic rule-based stand-ins for the LLM/VLM backends.

``AppKnowledgeChat`` answers the intent, decomposition and summary prompts
from the screen descriptions of one app; ``MilestoneMatchLogits`` judges a
trajectory by matching milestones, in order, against the screens it visits.
Both are pure functions of the prompt, so they behave like scripted
fixtures while covering prompts no table could enumerate.
"""

from __future__ import annotations

import re

from .errors import BackendError
from .prompts import field, section
from .providers import ChatRequest, LogitRequest, LogitVector
from .utg import Utg, breadcrumb

_VERBS = ("navigate to", "go to", "open", "view", "visit", "enter", "reach", "tap", "show")
_STEP = re.compile(r"^\s*\d+\.\s*(.+?) '(.+)' on '(.+)' -> '(.+)'\s*$")


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"\w+", text.lower()))


def milestone_object(milestone: str) -> str:
    text = milestone.strip().rstrip(".").strip()
    low = text.lower()
    for verb in _VERBS:
        if low.startswith(verb + " "):
            return text[len(verb) + 1:].strip()
    return text


def milestone_reached(milestone: str, screen_title: str) -> bool:
    want = _tokens(milestone_object(milestone))
    return bool(want) and want <= _tokens(screen_title)


def completed_milestones(milestones: list[str], screen_titles: list[str]) -> int:
    """Milestones matched in order (greedy subsequence) by visited screens."""
    i = 0
    for title in screen_titles:
        if i < len(milestones) and milestone_reached(milestones[i], title):
            i += 1
    return i


class AppKnowledgeChat:
    """Answers kgrag prompts using the breadcrumbs in an app's screen descriptions."""

    def __init__(self, utg: Utg | None = None):
        self.crumbs: dict[str, list[str]] = {}
        if utg is not None:
            for s in utg.screens:
                self.crumbs[s.title.lower()] = breadcrumb(s)

    def chat(self, req: ChatRequest) -> str:
        prompt = req.user_prompt
        task = field(prompt, "TASK")
        if task == "propose-intents":
            return self._intents(prompt)
        if task == "decompose-intent":
            return self._decompose(field(prompt, "Intent") or "")
        if task == "summarize-trajectory":
            return self._summary(prompt)
        raise BackendError(f"unrecognised prompt kind {task!r}")

    def _intents(self, prompt: str) -> str:
        desc = field(prompt, "Description") or ""
        if "Path:" not in desc:
            # nothing worth navigating to, e.g. the launch screen
            return ""
        title = desc.split(".", 1)[0].strip()
        return f"view {title}"

    def _decompose(self, goal: str) -> str:
        obj = milestone_object(goal)
        crumbs = self.crumbs.get(obj.lower()) or [obj]
        return "\n".join(f"{i}. Open {c}" for i, c in enumerate(crumbs, 1))

    def _summary(self, prompt: str) -> str:
        clauses = []
        for ln in section(prompt, "Steps"):
            m = _STEP.match(ln)
            if m:
                verb, widget, screen, _ = m.groups()
                clauses.append(f"{verb} '{widget}' on {screen}")
        if not clauses:
            raise BackendError("summary prompt lists no steps")
        text = ", then ".join(clauses)
        return text[0].upper() + text[1:] + "."


class MilestoneMatchLogits:
    """Scores ``score-trajectory`` prompts by in-order milestone matching.

    Logits fall off linearly (``-spread`` per unit) from the matched count,
    so the distribution peaks at that count.
    """

    def __init__(self, spread: float = 3.0):
        self.spread = spread

    def score_logits(self, req: LogitRequest) -> LogitVector:
        milestones = [re.sub(r"^\s*\d+\.\s*", "", ln).strip() for ln in section(req.prompt, "Milestones")]
        screens_line = field(req.prompt, "Screens")
        if not milestones or screens_line is None:
            raise BackendError("prompt is not a score-trajectory prompt")
        titles = [t.strip() for t in screens_line.split("|")]
        count = completed_milestones(milestones, titles)
        values = []
        for tok in req.answer_tokens:
            try:
                values.append(-self.spread * abs(int(tok) - count))
            except ValueError:
                values.append(-self.spread * (len(milestones) + 1))
        return LogitVector(tuple(values))
