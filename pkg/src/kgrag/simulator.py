"""Run GUI-agent policies against a UTG and score them.

The UTG doubles as the environment: an episode starts on ``task.start`` and
every decision picks one outgoing transition. A decision counts as correct
when it lies on some shortest path to the goal.

Metric conventions (also written into every report):

* SR: 100 * successful episodes / episodes
* DA: 100 * correct decisions / decisions, pooled over all episodes
* AS: mean steps over successful episodes only
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from .errors import PolicyError, SuiteMismatch
from .knowledge import KnowledgeDb, RetrievalHit, query
from .providers import Embedder
from .utg import Screen, Step, Task, Transition, Utg

CONVENTIONS = {
    "sr": "percent of tasks whose episode reached the goal",
    "da": "percent of decisions on some shortest path to the goal, pooled over all episodes",
    "as_steps": "mean steps over successful episodes only",
}


@dataclass(frozen=True)
class Observation:
    task_id: str
    instruction: str
    screen: Screen
    outgoing: tuple[Transition, ...]
    step: int
    visited: tuple[str, ...]
    hits: tuple[RetrievalHit, ...] | None = None


@dataclass(frozen=True)
class Decision:
    transition: Transition
    source: str = "policy"  # "retrieval" when replayed from a retrieved trajectory


class Policy(Protocol):
    def begin(self, task: Task) -> None: ...

    def decide(self, obs: Observation) -> Decision: ...


@dataclass(frozen=True)
class DecisionRecord:
    screen_id: str
    step: Step
    correct: bool
    source: str = "policy"

    def to_dict(self) -> dict:
        return {"screen_id": self.screen_id, "step": self.step.to_dict(),
                "correct": self.correct, "source": self.source}


@dataclass(frozen=True)
class EpisodeResult:
    task_id: str
    success: bool
    steps_taken: int
    decisions: tuple[DecisionRecord, ...]
    retrieval_hits_used: int = 0
    error: str | None = None

    @property
    def correct_decisions(self) -> int:
        return sum(d.correct for d in self.decisions)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "success": self.success,
            "steps_taken": self.steps_taken,
            "correct_decisions": self.correct_decisions,
            "retrieval_hits_used": self.retrieval_hits_used,
            "error": self.error,
            "decisions": [d.to_dict() for d in self.decisions],
        }


# --- policies ------------------------------------------------------------


def _episode_rng(seed: int, task_id: str, *extra: object) -> random.Random:
    # str seeds hash through sha512, so this is stable across processes
    return random.Random("|".join(map(str, (seed, task_id) + extra)))


class RandomWalkPolicy:
    """Uniform choice among outgoing transitions."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = random.Random(seed)

    def begin(self, task: Task) -> None:
        self._rng = _episode_rng(self.seed, task.task_id)

    def decide(self, obs: Observation) -> Decision:
        return Decision(self._rng.choice(obs.outgoing))


class OraclePolicy:
    """Follows the task's reference path."""

    def __init__(self) -> None:
        self._steps: dict[str, Step] = {}

    def begin(self, task: Task) -> None:
        self._steps = {s.screen_id: s for s in task.reference_path.steps}

    def decide(self, obs: Observation) -> Decision:
        s = self._steps.get(obs.screen.screen_id)
        for t in obs.outgoing:
            if s is not None and (t.widget_id, t.action, t.dst) == (s.widget_id, s.action, s.next_screen):
                return Decision(t)
        raise PolicyError(f"reference path has no step from {obs.screen.screen_id}")


class HintProvider(Protocol):
    def hints(self, obs: Observation) -> Sequence[float]: ...


def _words(text: str) -> set[str]:
    return set(re.findall(r"\w+", text.lower()))


class LexicalHints:
    """Word overlap (Jaccard) between instruction and widget description."""

    def hints(self, obs: Observation) -> list[float]:
        want = _words(obs.instruction)
        out = []
        for t in obs.outgoing:
            w = obs.screen.widget(t.widget_id)
            have = _words(w.description) if w else set()
            out.append(len(want & have) / len(want | have) if want | have else 0.0)
        return out


class ScriptedHints:
    """Simulated model hints with a fixed per-step accuracy.

    For a known instruction, with probability ``accuracy`` the hint marks the
    transitions that lie on a shortest path to the instruction's goal;
    otherwise it marks one wrong transition. Draws are keyed on (seed,
    instruction, screen, step), so runs are reproducible. Unknown
    instructions fall back to lexical overlap.
    """

    def __init__(self, utg: Utg, goals: Mapping[str, str], accuracy: float = 0.8, seed: int = 0):
        if not 0.0 <= accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")
        self.utg = utg
        self.goals = dict(goals)
        self.accuracy = accuracy
        self.seed = seed
        self._dist: dict[str, dict[str, int]] = {}
        self._lexical = LexicalHints()

    @classmethod
    def for_tasks(cls, utg: Utg, tasks: Sequence[Task], **kw) -> "ScriptedHints":
        return cls(utg, {t.instruction: t.goal for t in tasks}, **kw)

    def hints(self, obs: Observation) -> list[float]:
        goal = self.goals.get(obs.instruction)
        if goal is None:
            return self._lexical.hints(obs)
        if goal not in self._dist:
            self._dist[goal] = self.utg.distances_to(goal)
        dist = self._dist[goal]
        here = dist.get(obs.screen.screen_id, math.inf)
        right = [i for i, t in enumerate(obs.outgoing) if dist.get(t.dst, math.inf) == here - 1]
        wrong = [i for i in range(len(obs.outgoing)) if i not in right]
        rng = random.Random(f"{self.seed}|{obs.instruction}|{obs.screen.screen_id}|{obs.step}")
        out = [0.0] * len(obs.outgoing)
        if right and (not wrong or rng.random() < self.accuracy):
            for i in right:
                out[i] = 1.0
        elif wrong:
            out[rng.choice(wrong)] = 1.0
        return out


class HintGreedyPolicy:
    """Greedy on hint scores; ties prefer unvisited screens, then a seeded draw."""

    def __init__(self, hints: HintProvider, seed: int = 0):
        self.hint_provider = hints
        self.seed = seed
        self._rng = random.Random(seed)

    def begin(self, task: Task) -> None:
        self._rng = _episode_rng(self.seed, task.task_id)

    def decide(self, obs: Observation) -> Decision:
        scores = self.hint_provider.hints(obs)
        if len(scores) != len(obs.outgoing):
            raise PolicyError("hint provider returned the wrong number of scores")
        keyed = [(s, t.dst not in obs.visited) for s, t in zip(scores, obs.outgoing)]
        best = max(keyed)
        picks = [t for k, t in zip(keyed, obs.outgoing) if k == best]
        return Decision(self._rng.choice(picks))


class KgRagPolicy:
    """Wraps a base policy with a replay fast path over retrieved trajectories.

    Hits are tried in similarity order; the first whose trajectory has a step
    leaving the current screen that still exists in the live graph decides.
    Otherwise (no hits, or stale steps) the base policy decides.
    """

    def __init__(self, base: Policy):
        self.base = base

    def begin(self, task: Task) -> None:
        self.base.begin(task)

    def decide(self, obs: Observation) -> Decision:
        here = obs.screen.screen_id
        for hit in obs.hits or ():
            for s in hit.entry.trajectory.steps:
                if s.screen_id != here:
                    continue
                for t in obs.outgoing:
                    if (t.widget_id, t.action, t.dst) == (s.widget_id, s.action, s.next_screen):
                        return Decision(t, "retrieval")
        return self.base.decide(obs)


# --- episodes ------------------------------------------------------------


def run_episode(task: Task, utg: Utg, policy: Policy, db: KnowledgeDb | None = None,
                embedder: Embedder | None = None, k: int = 3) -> EpisodeResult:
    bad = task.problems(utg)
    if bad:
        raise ValueError(f"task {task.task_id} does not fit the graph: {bad[0]}")
    hits = None
    if db is not None:
        if embedder is None:
            raise ValueError("an embedder is required when a knowledge database is given")
        hits = tuple(query(db, task.instruction, k, embedder))
    dist = utg.distances_to(task.goal)
    policy.begin(task)
    cur = task.start
    visited = [cur]
    decisions: list[DecisionRecord] = []
    replayed = 0
    error = None
    while cur != task.goal and len(decisions) < task.step_budget:
        outgoing = utg.outgoing(cur)
        if not outgoing:
            error = f"dead end at {cur}"
            break
        obs = Observation(task.task_id, task.instruction, utg.screen(cur), outgoing,
                          len(decisions), tuple(visited), hits)
        try:
            d = policy.decide(obs)
            if d.transition not in outgoing:
                raise PolicyError(f"transition {d.transition} does not leave {cur}")
        except Exception as exc:  # any policy failure ends the episode as a failure
            error = f"{type(exc).__name__}: {exc}"
            break
        t = d.transition
        correct = cur in dist and dist.get(t.dst, math.inf) == dist[cur] - 1
        decisions.append(DecisionRecord(cur, Step.of(t), correct, d.source))
        replayed += d.source == "retrieval"
        cur = t.dst
        visited.append(cur)
    return EpisodeResult(task.task_id, cur == task.goal, len(decisions), tuple(decisions),
                         replayed, error)


# --- metrics -------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    sr: float | None
    da: float | None
    as_steps: float | None
    rows: tuple[EpisodeResult, ...]
    label: str = ""
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(r.task_id for r in self.rows)

    def to_dict(self) -> dict:
        n = len(self.rows)
        return {
            "label": self.label,
            "conventions": self.conventions,
            "counts": {
                "tasks": n,
                "successes": sum(r.success for r in self.rows),
                "decisions": sum(r.steps_taken for r in self.rows),
                "correct_decisions": sum(r.correct_decisions for r in self.rows),
            },
            "sr": self.sr,
            "da": self.da,
            "as_steps": self.as_steps,
            "undefined": [k for k in ("sr", "da", "as_steps") if getattr(self, k) is None],
            "rows": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "task_id", "success", "steps_taken", "decisions",
                    "correct_decisions", "retrieval_hits_used"])
        for r in self.rows:
            w.writerow([self.label, r.task_id, int(r.success), r.steps_taken, len(r.decisions),
                        r.correct_decisions, r.retrieval_hits_used])
        return buf.getvalue()


def aggregate(rows: Sequence[EpisodeResult]) -> tuple[float | None, float | None, float | None]:
    """(SR, DA, AS) from raw episode rows; None where a denominator is zero."""
    n = len(rows)
    sr = 100.0 * sum(r.success for r in rows) / n if n else None
    total = sum(len(r.decisions) for r in rows)
    da = 100.0 * sum(r.correct_decisions for r in rows) / total if total else None
    wins = [r.steps_taken for r in rows if r.success]
    as_steps = sum(wins) / len(wins) if wins else None
    return sr, da, as_steps


def report_from_rows(rows: Sequence[EpisodeResult], label: str = "") -> MetricsReport:
    rows = tuple(sorted(rows, key=lambda r: r.task_id))
    sr, da, as_steps = aggregate(rows)
    return MetricsReport(sr, da, as_steps, rows, label)


def run_suite(tasks: Sequence[Task], utg: Utg, policy: Policy | None = None,
              db: KnowledgeDb | None = None, embedder: Embedder | None = None, k: int = 3,
              label: str = "", workers: int = 1, policy_factory=None) -> MetricsReport:
    """Run every task and fold the results in task_id order.

    Concurrent runs need ``policy_factory`` (a zero-argument callable) so
    each worker owns its policy state.
    """
    ordered = sorted(tasks, key=lambda t: t.task_id)
    if workers > 1:
        if policy_factory is None:
            raise ValueError("workers > 1 requires policy_factory")
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(
                lambda t: run_episode(t, utg, policy_factory(), db, embedder, k), ordered))
    else:
        pol = policy if policy is not None else policy_factory()
        rows = [run_episode(t, utg, pol, db, embedder, k) for t in ordered]
    return report_from_rows(rows, label)


@dataclass(frozen=True)
class ComparisonReport:
    baseline: MetricsReport
    augmented: MetricsReport
    deltas: dict

    def to_dict(self) -> dict:
        return {
            "baseline": {k: getattr(self.baseline, k) for k in ("label", "sr", "da", "as_steps")},
            "augmented": {k: getattr(self.augmented, k) for k in ("label", "sr", "da", "as_steps")},
            "deltas": self.deltas,
            "conventions": CONVENTIONS,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render(self) -> str:
        return render_table([self.baseline, self.augmented], self.deltas)


def compare_runs(a: MetricsReport, b: MetricsReport) -> ComparisonReport:
    """Deltas ``b - a`` per metric (a = baseline, b = augmented)."""
    if sorted(a.task_ids) != sorted(b.task_ids):
        raise SuiteMismatch("reports cover different task suites")
    deltas = {}
    for k in ("sr", "da", "as_steps"):
        x, y = getattr(a, k), getattr(b, k)
        deltas[k] = None if x is None or y is None else y - x
    return ComparisonReport(a, b, deltas)


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def _fmt_delta(v: float | None) -> str:
    return "n/a" if v is None else f"{v:+.2f}"


def render_table(reports: Sequence[MetricsReport], deltas: dict | None = None) -> str:
    """Fixed-width table in SR, DA, AS column order."""
    width = max([len("Run"), len("Delta")] + [len(r.label or "run") for r in reports])
    head = f"{'Run':<{width}}  {'SR↑':>8}  {'DA↑':>8}  {'AS↓':>8}"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.label or 'run':<{width}}  {_fmt(r.sr):>8}  {_fmt(r.da):>8}  {_fmt(r.as_steps):>8}")
    if deltas is not None:
        lines.append(f"{'Delta':<{width}}  {_fmt_delta(deltas['sr']):>8}  "
                     f"{_fmt_delta(deltas['da']):>8}  {_fmt_delta(deltas['as_steps']):>8}")
    lines.append("SR/DA in %; DA pooled per decision; AS averaged over successful episodes.")
    return "\n".join(lines) + "\n"
