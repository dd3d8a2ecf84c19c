"""Prompt templates and the list parser used on model output.

Every prompt opens with a ``TASK: <name>`` line so scripted backends (and
humans reading a cache file) can tell them apart.
"""

from __future__ import annotations

import re
from typing import Sequence

from .errors import DecompositionError
from .utg import Screen, Trajectory, Utg

INTENT_SYSTEM = "You are a mobile app analyst. You infer what users want to do on an app screen."
DECOMPOSE_SYSTEM = "You plan mobile app tasks as short ordered milestones."
SCORE_SYSTEM = "You judge how far a UI action sequence progresses toward a goal."
SUMMARY_SYSTEM = "You describe UI action sequences in one concise sentence."


def intents_prompt(app_name: str, screen: Screen, limit: int) -> str:
    lines = [
        "TASK: propose-intents",
        f"App: {app_name}",
        f"Screen: {screen.screen_id}",
        f"Description: {screen.description}",
        "Widgets:",
    ]
    lines += [f"- {w.description}" for w in screen.widgets] or ["- (none)"]
    lines.append(f"List up to {limit} distinct user intents this screen serves, one per line.")
    return "\n".join(lines)


def decompose_prompt(goal_text: str) -> str:
    return "\n".join([
        "TASK: decompose-intent",
        f"Intent: {goal_text}",
        "Break the intent into the ordered milestones a user reaches on the way.",
        "Answer with a numbered list, one milestone per line.",
    ])


def step_lines(t: Trajectory, utg: Utg) -> list[str]:
    out = []
    for i, s in enumerate(t.steps, 1):
        src = utg.screen(s.screen_id)
        w = src.widget(s.widget_id)
        wdesc = w.description if w else s.widget_id
        out.append(f"{i}. {s.action.verb()} '{wdesc}' on '{src.title}' -> '{utg.screen(s.next_screen).title}'")
    return out


def score_prompt(goal_text: str, milestones: Sequence[str], t: Trajectory, utg: Utg) -> str:
    m = len(milestones)
    lines = ["TASK: score-trajectory", f"Intent: {goal_text}", "Milestones:"]
    lines += [f"{i}. {ms}" for i, ms in enumerate(milestones, 1)]
    lines.append("Trajectory:")
    lines += step_lines(t, utg) or ["(no actions)"]
    lines.append("Screens: " + " | ".join(utg.screen(s).title for s in t.screens))
    lines.append(f"How many milestones (0-{m}) does this trajectory complete? Answer with one number.")
    return "\n".join(lines)


def summary_prompt(t: Trajectory, utg: Utg) -> str:
    lines = ["TASK: summarize-trajectory", "Steps:"]
    lines += step_lines(t, utg)
    lines.append("Summarize these steps as one sentence that names every tapped element in order.")
    return "\n".join(lines)


_NUMBERED = re.compile(r"^\s*(?:step\s*)?\(?\d+[.):]\s*(.+?)\s*$", re.IGNORECASE)
_BULLET = re.compile(r"^\s*[-*•]\s+(.+?)\s*$")
_MAX_PLAIN_WORDS = 12


def parse_list(text: str) -> list[str]:
    """Parse a numbered list, a bulleted list, or one item per line.

    Numbered items win when present (surrounding prose is dropped), then
    bullets. Plain lines are accepted only if every line is short and none
    reads like an introduction ending in ':'.
    """
    lines = [ln for ln in (text or "").splitlines() if ln.strip()]
    if not lines:
        raise DecompositionError("empty response")
    for pattern in (_NUMBERED, _BULLET):
        items = [m.group(1) for m in map(pattern.match, lines) if m]
        if items:
            return items
    if all(len(ln.split()) <= _MAX_PLAIN_WORDS and not ln.rstrip().endswith(":") for ln in lines):
        return [ln.strip() for ln in lines]
    raise DecompositionError(f"no list found in response: {text[:80]!r}")


def section(prompt: str, header: str) -> list[str]:
    """Lines under ``header:`` up to the next header-looking line."""
    lines = prompt.splitlines()
    try:
        i = next(k for k, ln in enumerate(lines) if ln.strip() == f"{header}:")
    except StopIteration:
        return []
    out = []
    for ln in lines[i + 1:]:
        if re.match(r"^[A-Z][A-Za-z ]*:", ln) and not _NUMBERED.match(ln):
            break
        out.append(ln)
    return out


def field(prompt: str, name: str) -> str | None:
    for ln in prompt.splitlines():
        if ln.startswith(f"{name}:"):
            return ln[len(name) + 1:].strip()
    return None
