"""UI transition graphs: data model, canonical JSON format, validation.

A UTG is a directed multigraph whose nodes are app screens and whose edges
are widget actions. Everything here is immutable once built so a single
graph can back many concurrent searches and episodes.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from collections import Counter, deque
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)


class ActionKind(str, enum.Enum):
    CLICK = "click"
    SWIPE = "swipe"
    TEXT_INPUT = "text_input"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    payload: str | None = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"kind": self.kind.value}
        if self.payload is not None:
            d["payload"] = self.payload
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Action":
        try:
            kind = ActionKind(d["kind"])
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad action {d!r}") from exc
        payload = d.get("payload")
        if payload is not None and not isinstance(payload, str):
            raise ParseError(f"action payload must be a string: {d!r}")
        return cls(kind, payload)

    def supports(self, other: "Action") -> bool:
        """True if a widget declaring ``self`` accepts the concrete ``other``."""
        if self.kind != other.kind:
            return False
        return self.payload is None or self.payload == other.payload

    def verb(self) -> str:
        if self.kind is ActionKind.SWIPE:
            return f"swipe {self.payload or ''}".rstrip()
        if self.kind is ActionKind.TEXT_INPUT:
            return f"type '{self.payload or ''}' into"
        return "tap"


CLICK = Action(ActionKind.CLICK)


@dataclass(frozen=True)
class AppMeta:
    product_id: str
    app_name: str
    package_name: str


@dataclass(frozen=True)
class Widget:
    widget_id: str
    description: str
    bounds: tuple[int, int, int, int]
    supported_actions: tuple[Action, ...]

    def supports(self, action: Action) -> bool:
        return any(a.supports(action) for a in self.supported_actions)


@dataclass(frozen=True)
class Screen:
    screen_id: str
    description: str
    widgets: tuple[Widget, ...] = ()

    @property
    def title(self) -> str:
        """Leading sentence of the description, used as the screen's name."""
        return self.description.split(".", 1)[0].strip() or self.screen_id

    def widget(self, widget_id: str) -> Widget | None:
        for w in self.widgets:
            if w.widget_id == widget_id:
                return w
        return None


@dataclass(frozen=True)
class Transition:
    src: str
    widget_id: str
    action: Action
    dst: str

    @property
    def key(self) -> tuple[str, str, Action]:
        return (self.src, self.widget_id, self.action)


@dataclass(frozen=True)
class Utg:
    meta: AppMeta
    screens: tuple[Screen, ...]
    transitions: tuple[Transition, ...]
    entry_screen: str

    @cached_property
    def screen_map(self) -> dict[str, Screen]:
        return {s.screen_id: s for s in self.screens}

    @cached_property
    def _out(self) -> dict[str, tuple[Transition, ...]]:
        out: dict[str, list[Transition]] = {}
        for t in self.transitions:
            out.setdefault(t.src, []).append(t)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def _transition_keys(self) -> frozenset:
        return frozenset((t.src, t.widget_id, t.action, t.dst) for t in self.transitions)

    def screen(self, screen_id: str) -> Screen:
        return self.screen_map[screen_id]

    def outgoing(self, screen_id: str) -> tuple[Transition, ...]:
        return self._out.get(screen_id, ())

    def has_transition(self, src: str, widget_id: str, action: Action, dst: str) -> bool:
        return (src, widget_id, action, dst) in self._transition_keys

    def distances_to(self, goal: str) -> dict[str, int]:
        """Shortest step count from every screen that can reach ``goal``."""
        rev: dict[str, set[str]] = {}
        for t in self.transitions:
            rev.setdefault(t.dst, set()).add(t.src)
        dist = {goal: 0}
        queue = deque([goal])
        while queue:
            cur = queue.popleft()
            for prev in rev.get(cur, ()):
                if prev not in dist:
                    dist[prev] = dist[cur] + 1
                    queue.append(prev)
        return dist

    def reachable_from(self, start: str) -> set[str]:
        seen = {start}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for t in self.outgoing(cur):
                if t.dst not in seen:
                    seen.add(t.dst)
                    queue.append(t.dst)
        return seen

    def shortest_path(self, start: str, goal: str) -> "Trajectory | None":
        """BFS shortest path; ties resolved by transition order in the document."""
        if start == goal:
            return Trajectory(start, ())
        parent: dict[str, Transition] = {}
        seen = {start}
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for t in self.outgoing(cur):
                if t.dst in seen:
                    continue
                seen.add(t.dst)
                parent[t.dst] = t
                if t.dst == goal:
                    steps = []
                    node = goal
                    while node != start:
                        tr = parent[node]
                        steps.append(Step.of(tr))
                        node = tr.src
                    return Trajectory(start, tuple(reversed(steps)))
                queue.append(t.dst)
        return None


# --- trajectories --------------------------------------------------------


@dataclass(frozen=True)
class Step:
    screen_id: str
    widget_id: str
    action: Action
    next_screen: str

    @classmethod
    def of(cls, t: Transition) -> "Step":
        return cls(t.src, t.widget_id, t.action, t.dst)

    def to_dict(self) -> dict:
        return {
            "screen_id": self.screen_id,
            "widget_id": self.widget_id,
            "action": self.action.to_dict(),
            "next_screen": self.next_screen,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Step":
        try:
            return cls(
                str(d["screen_id"]), str(d["widget_id"]),
                Action.from_dict(d["action"]), str(d["next_screen"]),
            )
        except KeyError as exc:
            raise ParseError(f"step missing field {exc}") from exc


@dataclass(frozen=True)
class Trajectory:
    start: str
    steps: tuple[Step, ...] = ()

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def end(self) -> str:
        return self.steps[-1].next_screen if self.steps else self.start

    @property
    def screens(self) -> tuple[str, ...]:
        return (self.start,) + tuple(s.next_screen for s in self.steps)

    @cached_property
    def path_id(self) -> str:
        """Stable textual identity, also the last-resort sort key."""
        parts = [self.start]
        for s in self.steps:
            parts.append(f"{s.widget_id}:{s.action.kind.value}:{s.action.payload or ''}")
            parts.append(s.next_screen)
        return ">".join(parts)

    def extend(self, t: Transition) -> "Trajectory":
        return Trajectory(self.start, self.steps + (Step.of(t),))

    def is_loop_free(self) -> bool:
        screens = self.screens
        return len(set(screens)) == len(screens)

    def problems(self, utg: Utg) -> list[str]:
        """Reasons this trajectory is not a legal loop-free walk of ``utg``."""
        out = []
        if self.start not in utg.screen_map:
            out.append(f"unknown start screen {self.start!r}")
        cur = self.start
        for i, s in enumerate(self.steps):
            if s.screen_id != cur:
                out.append(f"step {i} starts at {s.screen_id!r}, expected {cur!r}")
            if not utg.has_transition(s.screen_id, s.widget_id, s.action, s.next_screen):
                out.append(f"step {i} is not a transition of the graph")
            cur = s.next_screen
        if not self.is_loop_free():
            out.append("trajectory revisits a screen")
        return out

    def to_dict(self) -> dict:
        return {"start": self.start, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Trajectory":
        try:
            return cls(str(d["start"]), tuple(Step.from_dict(s) for s in d["steps"]))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad trajectory: {exc}") from exc


@dataclass(frozen=True)
class Task:
    """One evaluation episode: reach ``goal`` from ``start`` following ``instruction``."""

    task_id: str
    instruction: str
    start: str
    goal: str
    reference_path: Trajectory
    step_budget: int

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "instruction": self.instruction,
            "start": self.start,
            "goal": self.goal,
            "reference_path": self.reference_path.to_dict(),
            "step_budget": self.step_budget,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Task":
        try:
            return cls(
                str(d["task_id"]), str(d["instruction"]), str(d["start"]), str(d["goal"]),
                Trajectory.from_dict(d["reference_path"]), int(d["step_budget"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad task record: {exc}") from exc

    def problems(self, utg: Utg) -> list[str]:
        out = [f"reference path: {p}" for p in self.reference_path.problems(utg)]
        if self.reference_path.start != self.start or self.reference_path.end != self.goal:
            out.append("reference path does not join start to goal")
        if self.step_budget < len(self.reference_path):
            out.append("step budget shorter than reference path")
        return out


# --- validation ----------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    location: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.code} at {self.location}: {self.message}"


def validate_utg(utg: Utg, include_warnings: bool = False) -> list[Violation]:
    """Collect every invariant violation (no early exit).

    Warnings flag legal-but-suspicious shapes, currently one widget driving
    several action kinds between the same pair of screens.
    """
    v: list[Violation] = []

    def add(code: str, msg: str, loc: str, severity: str = "error") -> None:
        v.append(Violation(code, msg, loc, severity))

    m = utg.meta
    for name in ("product_id", "app_name", "package_name"):
        if not getattr(m, name).strip():
            add("EmptyField", f"{name} is empty", f"app.{name}")
    if m.package_name and re.search(r"\s", m.package_name):
        add("BadPackageName", "package_name contains whitespace", "app.package_name")

    ids = Counter(s.screen_id for s in utg.screens)
    for sid, n in sorted(ids.items()):
        if n > 1:
            add("DuplicateScreen", f"screen_id {sid!r} appears {n} times", f"screens[{sid}]")
    if utg.entry_screen not in ids:
        add("MissingEntry", f"entry screen {utg.entry_screen!r} is not defined", "entry_screen")

    for s in utg.screens:
        wids = Counter(w.widget_id for w in s.widgets)
        for wid, n in sorted(wids.items()):
            if n > 1:
                add("DuplicateWidget", f"widget_id {wid!r} appears {n} times", f"{s.screen_id}/{wid}")
        for w in s.widgets:
            loc = f"{s.screen_id}/{w.widget_id}"
            x1, y1, x2, y2 = w.bounds
            if not (x1 < x2 and y1 < y2):
                add("BoundsInverted", f"bounds {list(w.bounds)} need x1<x2 and y1<y2", loc)
            if not w.supported_actions:
                add("NoActions", "widget supports no actions", loc)
            for a in w.supported_actions:
                if a.kind is ActionKind.TEXT_INPUT and a.payload is not None and not a.payload:
                    add("EmptyTextPayload", "text input payload is empty", loc)

    seen_keys: set = set()
    pair_kinds: dict[tuple[str, str, str], set[ActionKind]] = {}
    for i, t in enumerate(utg.transitions):
        loc = f"transitions[{i}]"
        for end in (t.src, t.dst):
            if end not in ids:
                add("UnknownScreen", f"screen {end!r} is not defined", loc)
        if t.action.kind is ActionKind.TEXT_INPUT and t.action.payload is not None and not t.action.payload:
            add("EmptyTextPayload", "text input payload is empty", loc)
        src = utg.screen_map.get(t.src)
        if src is not None:
            w = src.widget(t.widget_id)
            if w is None:
                add("UnknownWidget", f"widget {t.widget_id!r} not on screen {t.src!r}", loc)
            elif not w.supports(t.action):
                add("UnsupportedAction", f"widget {t.widget_id!r} does not support {t.action.kind.value}", loc)
        if t.key in seen_keys:
            add("DuplicateTransition", f"({t.src}, {t.widget_id}, {t.action.kind.value}) repeats", loc)
        seen_keys.add(t.key)
        kinds = pair_kinds.setdefault((t.src, t.widget_id, t.dst), set())
        if kinds and t.action.kind not in kinds and include_warnings:
            add("MultiActionEdge", "same widget links these screens via several action kinds", loc, "warning")
        kinds.add(t.action.kind)
    return v


# --- JSON document -------------------------------------------------------

_KEYS = {
    "root": {"app", "entry_screen", "screens", "transitions"},
    "app": {"product_id", "app_name", "package_name"},
    "screen": {"screen_id", "description", "widgets"},
    "widget": {"widget_id", "description", "bounds", "actions"},
    "transition": {"from", "widget_id", "action", "to"},
    "action": {"kind", "payload"},
}


def _check_keys(obj: Any, kind: str, where: str, strict: bool) -> None:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    extra = set(obj) - _KEYS[kind]
    if extra:
        msg = f"{where}: unknown keys {sorted(extra)}"
        if strict:
            raise ParseError(msg)
        log.warning("%s (ignored)", msg)


def utg_from_dict(doc: Any, strict: bool = False) -> Utg:
    """Build a Utg from a parsed document without validating invariants."""
    _check_keys(doc, "root", "document", strict)
    try:
        app = doc["app"]
        _check_keys(app, "app", "app", strict)
        meta = AppMeta(str(app["product_id"]), str(app["app_name"]), str(app["package_name"]))
        screens = []
        for i, s in enumerate(doc["screens"]):
            _check_keys(s, "screen", f"screens[{i}]", strict)
            widgets = []
            for j, w in enumerate(s.get("widgets", [])):
                _check_keys(w, "widget", f"screens[{i}].widgets[{j}]", strict)
                for k, a in enumerate(w["actions"]):
                    _check_keys(a, "action", f"screens[{i}].widgets[{j}].actions[{k}]", strict)
                bounds = tuple(int(b) for b in w["bounds"])
                if len(bounds) != 4:
                    raise ParseError(f"screens[{i}].widgets[{j}]: bounds need 4 integers")
                widgets.append(Widget(
                    str(w["widget_id"]), str(w["description"]), bounds,  # type: ignore[arg-type]
                    tuple(Action.from_dict(a) for a in w["actions"]),
                ))
            screens.append(Screen(str(s["screen_id"]), str(s["description"]), tuple(widgets)))
        transitions = []
        for i, t in enumerate(doc["transitions"]):
            _check_keys(t, "transition", f"transitions[{i}]", strict)
            _check_keys(t["action"], "action", f"transitions[{i}].action", strict)
            transitions.append(Transition(
                str(t["from"]), str(t["widget_id"]), Action.from_dict(t["action"]), str(t["to"]),
            ))
        return Utg(meta, tuple(screens), tuple(transitions), str(doc["entry_screen"]))
    except KeyError as exc:
        raise ParseError(f"missing required key {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc)) from exc


def utg_to_dict(utg: Utg) -> dict:
    return {
        "app": {
            "product_id": utg.meta.product_id,
            "app_name": utg.meta.app_name,
            "package_name": utg.meta.package_name,
        },
        "entry_screen": utg.entry_screen,
        "screens": [
            {
                "screen_id": s.screen_id,
                "description": s.description,
                "widgets": [
                    {
                        "widget_id": w.widget_id,
                        "description": w.description,
                        "bounds": list(w.bounds),
                        "actions": [a.to_dict() for a in w.supported_actions],
                    }
                    for w in s.widgets
                ],
            }
            for s in utg.screens
        ],
        "transitions": [
            {"from": t.src, "widget_id": t.widget_id, "action": t.action.to_dict(), "to": t.dst}
            for t in utg.transitions
        ],
    }


def dumps_utg(utg: Utg) -> str:
    return json.dumps(utg_to_dict(utg), indent=2, ensure_ascii=False) + "\n"


def parse_utg(text: str, strict: bool = False) -> Utg:
    """Parse and validate a UTG document held in memory."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    utg = utg_from_dict(doc, strict=strict)
    violations = validate_utg(utg)
    if violations:
        raise ValidationError(violations[0])
    return utg


def load_utg(path: str | Path, strict: bool = False) -> Utg:
    return parse_utg(Path(path).read_text(encoding="utf-8"), strict=strict)


def save_utg(utg: Utg, path: str | Path) -> None:
    Path(path).write_text(dumps_utg(utg), encoding="utf-8")


def semantically_equal(a: Utg, b: Utg) -> bool:
    """Equality up to screen and transition ordering."""
    return (
        a.meta == b.meta
        and a.entry_screen == b.entry_screen
        and Counter(a.screens) == Counter(b.screens)
        and Counter(a.transitions) == Counter(b.transitions)
    )


# --- task suites ---------------------------------------------------------


def dumps_tasks(tasks: Iterable[Task]) -> str:
    return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in tasks)


def load_tasks(path: str | Path) -> list[Task]:
    tasks = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            tasks.append(Task.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{n}: {exc}") from exc
    return tasks


def save_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    Path(path).write_text(dumps_tasks(tasks), encoding="utf-8")


def breadcrumb(screen: Screen) -> list[str]:
    """Titles listed in a ``Path: A > B > C`` clause of the description, if any."""
    m = re.search(r"Path:\s*([^.]+)", screen.description)
    if not m:
        return []
    return [c.strip() for c in m.group(1).split(">") if c.strip()]

