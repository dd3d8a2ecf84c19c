"""Seeded synthetic UTG + task-suite generator.

Stands in for device crawling. Graphs are built as a layered tree (one level
per navigation depth) plus extra edges that never jump forward more than one
level, so every designated solution path is also a shortest path. A share of
non-solution edges is then deleted to mimic incomplete extraction.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass

from .errors import GenerationError
from .utg import (
    CLICK, Action, ActionKind, AppMeta, Screen, Step, Task, Trajectory, Transition, Utg, Widget,
)

_ADJECTIVES = [
    "Account", "Advanced", "Archived", "Audio", "Backup", "Billing", "Cloud", "Daily",
    "Family", "Friend", "General", "Hidden", "Linked", "Local", "Member", "Night",
    "Offline", "Partner", "Premium", "Quick", "Recent", "Saved", "Shared", "Smart",
    "Starred", "System", "Team", "Travel", "Video", "Weekly",
]
_NOUNS = [
    "Alerts", "Badges", "Calendar", "Cart", "Coupons", "Devices", "Downloads", "Drafts",
    "Favorites", "Feedback", "Gallery", "History", "Inbox", "Invoices", "Language",
    "Library", "Messages", "Notes", "Orders", "Payments", "Permissions", "Playlists",
    "Privacy", "Profile", "Rewards", "Security", "Settings", "Storage", "Subscriptions",
    "Themes", "Tickets", "Wallet",
]
_FLAVOR = [
    "Lists entries with a toolbar on top",
    "Shows a scrollable card layout",
    "Contains a header and several menu rows",
    "Displays a form with toggles",
    "Shows a grid of tiles",
]
_SWIPES = ["left", "right", "up", "down"]


@dataclass(frozen=True)
class BenchSpec:
    seed: int
    screen_count: int
    max_out_degree: int
    goal_depth: int
    fragmentation_ratio: float
    task_count: int
    # tasks draw their depth uniformly from [min_goal_depth, goal_depth]
    min_goal_depth: int | None = None
    # every non-entry screen gets a Back transition to its parent, on top of
    # max_out_degree (it models the system back button)
    back_edges: bool = True

    def problems(self) -> list[str]:
        out = []
        for name in ("screen_count", "max_out_degree", "goal_depth", "task_count"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be positive")
        if self.goal_depth >= self.screen_count:
            out.append("goal_depth must be smaller than screen_count")
        if not 0 <= self.fragmentation_ratio < 1:
            out.append("fragmentation_ratio must lie in [0, 1)")
        lo = self.min_goal_depth
        if lo is not None and not 1 <= lo <= self.goal_depth:
            out.append("min_goal_depth must lie in [1, goal_depth]")
        if not -(2**63) <= self.seed < 2**64:
            out.append("seed must fit in 64 bits")
        return out


def _titles(rng: random.Random) -> list[str]:
    # two single-word tokens each, so no title's words are a subset of another's
    combos = [f"{a} {n}" for a, n in itertools.product(_ADJECTIVES, _NOUNS)]
    rng.shuffle(combos)
    return combos


def generate_bench(spec: BenchSpec, budget_slack: int = 2) -> tuple[Utg, list[Task]]:
    """Build a graph and a task suite as a pure function of ``spec``.

    Each task's solution path has exactly its drawn depth and survives
    fragmentation; ``step_budget`` is the path length plus ``budget_slack``.
    """
    bad = spec.problems()
    if bad:
        raise GenerationError("; ".join(bad))
    rng = random.Random(spec.seed)
    titles = _titles(rng)
    if spec.screen_count - 1 > len(titles):
        raise GenerationError(f"at most {len(titles) + 1} screens supported")
    deg = spec.max_out_degree
    lo = spec.min_goal_depth or spec.goal_depth

    title = {"s0": "Home"}
    level = {"s0": 0}
    parent: dict[str, str] = {}
    children: dict[str, list[str]] = {"s0": []}
    edges: list[tuple[str, str, Action]] = []  # (src, dst, action), tree edges first

    def new_child(p: str) -> str:
        sid = f"s{len(title)}"
        title[sid] = titles[len(title) - 1]
        level[sid] = level[p] + 1
        parent[sid] = p
        children[sid] = []
        children[p].append(sid)
        edges.append((p, sid, CLICK))
        return sid

    def has_room(s: str) -> bool:
        return sum(1 for e in edges if e[0] == s) < deg

    goals: set[str] = set()
    solutions: list[list[str]] = []
    for _ in range(spec.task_count):
        depth = rng.randint(lo, spec.goal_depth)
        for _attempt in range(64):
            path = ["s0"]
            for lvl in range(1, depth + 1):
                cur = path[-1]
                last = lvl == depth
                reuse = [c for c in children[cur] if not (last and c in goals)]
                can_new = has_room(cur) and len(title) < spec.screen_count
                if can_new and (not reuse or rng.random() < 0.5):
                    path.append(new_child(cur))
                elif reuse:
                    path.append(rng.choice(reuse))
                else:
                    break
            if len(path) == depth + 1:
                break
        else:
            raise GenerationError(
                f"cannot place {spec.task_count} distinct goals within "
                f"{spec.screen_count} screens at out-degree {deg}"
            )
        goals.add(path[-1])
        solutions.append(path)

    while len(title) < spec.screen_count:
        open_parents = [s for s in title if has_room(s)]
        if not open_parents:
            raise GenerationError("out-degree too small to place every screen")
        new_child(rng.choice(open_parents))

    ids = list(title)
    for s in ids:
        taken = {d for (src, d, _) in edges if src == s}
        room = deg - len(taken)
        if room <= 0:
            continue
        pool = [t for t in ids if t != s and t not in taken and level[t] <= level[s] + 1
                and not (spec.back_edges and t == parent.get(s))]
        for dst in rng.sample(pool, min(len(pool), rng.randint(0, room))):
            if rng.random() < 0.2:
                action = Action(ActionKind.SWIPE, rng.choice(_SWIPES))
            else:
                action = CLICK
            edges.append((s, dst, action))

    if spec.back_edges:
        edges.extend((s, parent[s], CLICK) for s in ids if s in parent)

    # one widget per edge; widget ids are positional on their screen
    widget_of: dict[int, str] = {}
    widgets: dict[str, list[Widget]] = {s: [] for s in ids}
    for i, (src, dst, action) in enumerate(edges):
        j = len(widgets[src])
        wid = f"w{j}"
        desc = f"Back to {title[dst]}" if parent.get(src) == dst else title[dst]
        widgets[src].append(Widget(wid, desc, (0, 120 * j, 1080, 120 * j + 100), (action,)))
        widget_of[i] = wid
    transitions = [Transition(src, widget_of[i], a, dst) for i, (src, dst, a) in enumerate(edges)]

    protected = {(p[k], p[k + 1]) for p in solutions for k in range(len(p) - 1)}
    # solution hops are always tree edges, which come first in ``edges``
    is_protected = [
        (t.src, t.dst) in protected and t.action == CLICK and parent.get(t.dst) == t.src
        for t in transitions
    ]
    n_delete = math.floor(spec.fragmentation_ratio * len(transitions))
    deletable = [i for i, p in enumerate(is_protected) if not p]
    if n_delete > len(deletable):
        raise GenerationError("fragmentation_ratio would delete solution-path edges")
    dropped = set(rng.sample(deletable, n_delete))
    kept = tuple(t for i, t in enumerate(transitions) if i not in dropped)

    screens = []
    for s in ids:
        crumbs, node = [], s
        while node != "s0":
            crumbs.append(title[node])
            node = parent[node]
        flavor = _FLAVOR[int(s[1:]) % len(_FLAVOR)]
        if crumbs:
            desc = f"{title[s]}. {flavor}. Path: {' > '.join(reversed(crumbs))}"
        else:
            desc = f"{title[s]}. App start screen"
        screens.append(Screen(s, desc, tuple(widgets[s])))

    meta = AppMeta(f"bench-{spec.seed}", f"Synthetic App {spec.seed}", f"com.bench.s{spec.seed}")
    utg = Utg(meta, tuple(screens), kept, "s0")

    tree_edge = {(t.src, t.dst): t for t in transitions if parent.get(t.dst) == t.src}
    tasks = []
    for i, path in enumerate(solutions):
        steps = tuple(Step.of(tree_edge[(path[k], path[k + 1])]) for k in range(len(path) - 1))
        ref = Trajectory("s0", steps)
        tasks.append(Task(
            f"task-{i:03d}", f"view {title[path[-1]]}", "s0", path[-1], ref, len(ref) + budget_slack,
        ))
    return utg, tasks
