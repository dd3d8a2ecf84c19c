"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the pytest terminal summary)
before asserting, so a failing criterion is still reported with its numbers.
"""

import filecmp
import itertools
import math
import random
import time

from kgrag.bench import BenchSpec, generate_bench
from kgrag.cli import main
from kgrag.heuristics import AppKnowledgeChat, MilestoneMatchLogits
from kgrag.intents import Intent
from kgrag.knowledge import dumps_db, loads_db, query
from kgrag.pathfinder import LlmScorer, SearchConfig, llm_bfs_search
from kgrag.pipeline import build_knowledge
from kgrag.providers import HashingEmbedder
from kgrag.scoring import ProbabilityDistribution, SoftmaxParams, proximity_score, softmax_slice, trajectory_score
from kgrag.simulator import HintGreedyPolicy, KgRagPolicy, ScriptedHints, run_suite
from builders import random_db, random_phrase
from oracles import (
    brute_proximity, brute_top_k, direct_softmax, hashed_logits, milestone_intent, oracle_search, random_utg,
)

E2E_SPEC = BenchSpec(seed=42, screen_count=150, max_out_degree=3, goal_depth=6,
                     fragmentation_ratio=0.2, task_count=50, min_goal_depth=4)
HINT_ACCURACY = 0.7

# Seed-42 baseline, frozen after checking the simulator against an independent
# Monte-Carlo walker: over 200 hint seeds the simulator averages SR 35.09
# (sd 6.67) and the walker estimates 34.98, so 52.0 is an upper-tail draw.
FROZEN_BASELINE = {"sr": 100.0 * 26 / 50, "da": 100.0 * 244 / 318, "as_steps": 140 / 26}


def test_criterion_1_softmax_oracle(acceptance):
    rng = random.Random(1)
    t0 = time.perf_counter()
    worst, sums_ok, shift_ok = 0.0, True, True
    for _ in range(1000):
        n = rng.randint(1, 12)
        x = [rng.uniform(-10, 10) for _ in range(n)]
        start = rng.randrange(n)
        end = rng.randint(start + 1, n)
        temp = rng.uniform(0.1, 5.0)
        p = SoftmaxParams(start, end, temp)
        got = softmax_slice(x, p).probs
        want = direct_softmax(x, start, end, temp)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
        sums_ok &= abs(math.fsum(got) - 1.0) <= 1e-9
        c = rng.uniform(-100, 100)
        shifted = softmax_slice([v + c for v in x], p).probs
        shift_ok &= all(abs(a - b) <= 1e-9 for a, b in zip(got, shifted))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and sums_ok and shift_ok and elapsed < 1.0
    acceptance(1, ok, f"max |diff| {worst:.2e}, sums ok {sums_ok}, shift ok {shift_ok}, {elapsed:.3f}s")
    assert ok


def test_criterion_2_proximity_completeness(acceptance):
    cases = exact = zeros_ok = nonpos = 0
    for n in (3, 4, 5):
        base = [float(n - i) for i in range(n)]  # strictly decreasing
        total = sum(base)
        for perm in itertools.permutations(base):
            pdf = [v / total for v in perm]
            s = proximity_score(ProbabilityDistribution(tuple(pdf)))
            cases += 1
            exact += s == brute_proximity(pdf)
            nonpos += s <= 0
            ascending = all(pdf[i] < pdf[i + 1] for i in range(n - 1))
            zeros_ok += (s == 0) == ascending
    expected = sum(math.factorial(n) for n in (3, 4, 5))
    ok = cases == expected and exact == zeros_ok == nonpos == cases
    acceptance(2, ok, f"{cases} permutations; exact {exact}, zero-iff-ascending {zeros_ok}, <=0 {nonpos}")
    assert ok


def test_criterion_3_search_oracle(acceptance):
    hash_intent = Intent("h#0", "h", "anything", ("a", "b"))

    def hashed(intent, t):
        return trajectory_score(hashed_logits(t.path_id, intent.m), intent.m)

    t0 = time.perf_counter()
    graphs = equal = subset = top = 0
    seed = 0
    while graphs < 200:
        utg = random_utg(seed)
        intent = milestone_intent(utg, seed)
        seed += 1
        if intent is None:
            continue
        graphs += 1
        unbounded = SearchConfig(threshold=1.0, max_depth=5, top_k=None)
        scorer = LlmScorer(MilestoneMatchLogits(), utg)
        got = llm_bfs_search(intent, utg, "n0", unbounded, scorer)
        want = oracle_search(utg, "n0", 5, lambda t: scorer(intent, t), intent.m, 1.0)
        got_h = llm_bfs_search(hash_intent, utg, "n0", SearchConfig(0.5, 1, 5, None), hashed)
        want_h = oracle_search(utg, "n0", 5, lambda t: hashed(hash_intent, t), 2, 0.5)
        equal += ([(s.trajectory.path_id, s.score) for s in got] == want
                  and [(s.trajectory.path_id, s.score) for s in got_h] == want_h)
        beam = llm_bfs_search(intent, utg, "n0", SearchConfig(threshold=1.0, max_depth=5, top_k=5), scorer)
        ids = {s.trajectory.path_id for s in beam}
        subset += ids <= {pid for pid, _ in want}
        top += bool(want) and want[0][0] in ids
    elapsed = time.perf_counter() - t0
    ok = equal == subset == top == 200 and elapsed < 10.0
    acceptance(3, ok, f"200 graphs; K=inf equal {equal}, K=5 subset {subset}, has top {top}, {elapsed:.2f}s")
    assert ok


def test_criterion_4_retrieval_exactness(acceptance):
    emb = HashingEmbedder(64)
    db = random_db(1000, emb, seed=4)
    again = loads_db(dumps_db(db))
    pairs = [(e.entry_id, e.key.values) for e in db.entries]
    rng = random.Random(44)
    matched = stable = 0
    worst = 0.0
    for _ in range(50):
        q = random_phrase(rng)
        hits = query(db, q, 10, emb)
        want = brute_top_k(pairs, emb.embed(q).values, 10)
        ids_ok = [h.entry.entry_id for h in hits] == [eid for _, eid in want]
        diff = max(abs(h.similarity - s) for h, (s, _) in zip(hits, want))
        worst = max(worst, diff)
        matched += ids_ok and diff <= 1e-12
        stable += query(again, q, 10, emb) == hits
    ok = matched == 50 and stable == 50 and again == db
    acceptance(4, ok, f"1000 entries; {matched}/50 match brute force (max diff {worst:.1e}), "
                      f"{stable}/50 identical after reload")
    assert ok


def _e2e():
    utg, tasks = generate_bench(E2E_SPEC)
    emb = HashingEmbedder(64)
    res = build_knowledge(utg, AppKnowledgeChat(utg), MilestoneMatchLogits(), emb, SearchConfig(max_depth=8))

    def base():
        return HintGreedyPolicy(ScriptedHints.for_tasks(utg, tasks, accuracy=HINT_ACCURACY, seed=42), seed=42)

    baseline = run_suite(tasks, utg, base(), label="baseline")
    kgrag = run_suite(tasks, utg, KgRagPolicy(base()), db=res.db, embedder=emb, k=3, label="kgrag")
    return tasks, baseline, kgrag


def test_criterion_5_end_to_end(acceptance):
    t0 = time.perf_counter()
    tasks, baseline, kgrag = _e2e()
    elapsed = time.perf_counter() - t0
    depths = {len(t.reference_path) for t in tasks}
    mean_ref = sum(len(t.reference_path) for t in tasks) / len(tasks)
    frozen = all(getattr(baseline, k) == v for k, v in FROZEN_BASELINE.items())
    ok = (len(tasks) == 50 and depths <= {4, 5, 6}
          and kgrag.sr == 100.0 and kgrag.as_steps == mean_ref
          and baseline.sr <= 70.0 and baseline.as_steps > kgrag.as_steps
          and frozen and elapsed < 30.0)
    acceptance(5, ok, f"kgrag SR {kgrag.sr:.2f} AS {kgrag.as_steps:.4f} (mean ref {mean_ref:.4f}); "
                      f"baseline SR {baseline.sr:.2f} AS {baseline.as_steps:.4f} DA {baseline.da:.2f}; "
                      f"frozen match {frozen}; {elapsed:.2f}s")
    assert ok


def _recompute(rows):
    n = len(rows)
    succ = [r for r in rows if r.success]
    decisions = sum(len(r.decisions) for r in rows)
    correct = sum(1 for r in rows for d in r.decisions if d.correct)
    sr = 100.0 * len(succ) / n if n else None
    da = 100.0 * correct / decisions if decisions else None
    as_steps = sum(r.steps_taken for r in succ) / len(succ) if succ else None
    return sr, da, as_steps


def test_criterion_6_metric_consistency(acceptance):
    _, baseline, kgrag = _e2e()
    utg, tasks = generate_bench(BenchSpec(8, 80, 3, 5, 0.2, 20, min_goal_depth=3))
    extra = [run_suite(tasks, utg, HintGreedyPolicy(ScriptedHints.for_tasks(utg, tasks, accuracy=a, seed=s),
                                                    seed=s))
             for a in (0.0, 0.3, 0.9) for s in (1, 2)]
    reports = [baseline, kgrag] + extra
    good = 0
    for r in reports:
        good += _recompute(r.rows) == (r.sr, r.da, r.as_steps)
        counts = r.to_dict()["counts"]
        good -= counts["decisions"] != sum(len(x.decisions) for x in r.rows)
    ok = good == len(reports)
    acceptance(6, ok, f"{good}/{len(reports)} suite runs agree exactly with raw rows")
    assert ok


def _cli_round(root, tag):
    d = root / tag
    d.mkdir()
    utg, suite = d / "bench.utg.json", d / "bench.suite.jsonl"
    codes = [
        main(["generate", "--seed", "42", "--screens", "150", "--goal-depth", "6", "--min-goal-depth", "4",
              "--fragmentation", "0.2", "--tasks", "50", "--utg", str(utg), "--suite", str(suite)]),
        main(["build", "--utg", str(utg), "--db", str(d / "kb" / "bench.kgdb"), "--seed", "42",
              "--max-depth", "8"]),
        main(["eval", "--suite", str(suite), "--utg", str(utg), "--db", str(d / "kb" / "bench.kgdb"),
              "--seed", "42", "--compare", "--out", str(d / "eval")]),
    ]
    return d, codes


def test_criterion_7_determinism(acceptance, tmp_path):
    a, codes_a = _cli_round(tmp_path, "a")
    b, codes_b = _cli_round(tmp_path, "b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    other = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    same = [f for f in files if filecmp.cmp(a / f, b / f, shallow=False)] if files == other else []
    ok = codes_a == codes_b == [0, 0, 0] and files == other and len(same) == len(files) and len(files) >= 12
    acceptance(7, ok, f"{len(same)}/{len(files)} artifacts byte-identical across two runs")
    assert ok
