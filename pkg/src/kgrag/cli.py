"""Command-line entry point: validate, generate, build, query, eval.

Exit codes: 0 success, 1 validation findings, 2 usage or I/O error,
3 provider or build-stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .bench import BenchSpec, generate_bench
from .errors import GenerationError, KgRagError, ParseError, ProviderError, ValidationError
from .heuristics import AppKnowledgeChat, MilestoneMatchLogits
from .intents import save_intents
from .knowledge import DEFAULT_KEY_MODE, KEY_MODES, load_db, load_dbs, query_many, save_db
from .pathfinder import SearchConfig, save_records
from .pipeline import StageError, build_knowledge
from .providers import (
    CachedChat, CachedEmbedder, CachedLogits, HashingEmbedder, HttpChat, HttpEmbedder,
    ResponseCache, load_fixture,
)
from .simulator import (
    HintGreedyPolicy, KgRagPolicy, LexicalHints, ScriptedHints, compare_runs, render_table, run_suite,
)
from .utg import dumps_tasks, dumps_utg, load_tasks, load_utg, utg_from_dict, validate_utg

log = logging.getLogger("kgrag")

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE, EXIT_STAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    d = SearchConfig()
    p.add_argument("--threshold", type=float, default=d.threshold)
    p.add_argument("--step-size", type=int, default=d.step_size)
    p.add_argument("--max-depth", type=int, default=d.max_depth)
    p.add_argument("--top-k", type=int, default=d.top_k)
    p.add_argument("--batch-size", type=int, default=d.batch_size)


def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--providers", choices=["fixture", "http"], default="fixture",
                   help="fixture: scripted tables + rule-based fallback; http: KGRAG_* endpoints")
    p.add_argument("--fixtures", type=Path, help="JSON file of canned chat/logit responses")
    p.add_argument("--strict-fixtures", action="store_true",
                   help="fail on prompts missing from --fixtures instead of falling back")
    p.add_argument("--embed-dim", type=int, default=64, help="dimension of the fixture embedder")
    p.add_argument("--llm-model", default="default")
    p.add_argument("--embed-model", default="default")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgrag", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="check a UTG file against the model invariants")
    p.add_argument("utg", type=Path)
    p.add_argument("--strict", action="store_true", help="reject unknown keys")
    p.add_argument("--warnings", action="store_true", help="also list warnings")

    p = sub.add_parser("generate", help="write a synthetic UTG and task suite")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--screens", type=int, default=150)
    p.add_argument("--max-out-degree", type=int, default=3)
    p.add_argument("--goal-depth", type=int, default=6)
    p.add_argument("--min-goal-depth", type=int)
    p.add_argument("--fragmentation", type=float, default=0.2)
    p.add_argument("--tasks", type=int, default=50)
    p.add_argument("--no-back-edges", action="store_true")
    p.add_argument("--utg", type=Path, required=True, help="output UTG path")
    p.add_argument("--suite", type=Path, required=True, help="output suite path (JSON lines)")

    p = sub.add_parser("build", help="offline build of a knowledge database from a UTG")
    p.add_argument("--utg", type=Path, required=True)
    p.add_argument("--db", type=Path, required=True, help="output database path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--per-screen-limit", type=int, default=5)
    p.add_argument("--key-mode", choices=KEY_MODES, default=DEFAULT_KEY_MODE)
    p.add_argument("--no-cache", action="store_true")
    _add_search_flags(p)
    _add_provider_flags(p)

    p = sub.add_parser("query", help="retrieve the closest stored intents")
    p.add_argument("instruction")
    p.add_argument("--db", type=Path, required=True, help="database file or directory of *.kgdb")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--providers", choices=["fixture", "http"], default="fixture")
    p.add_argument("--embed-model", default="default")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="run baseline and/or KG-RAG policies over a task suite")
    p.add_argument("--suite", type=Path, required=True)
    p.add_argument("--utg", type=Path, required=True)
    p.add_argument("--db", type=Path)
    p.add_argument("--seed", type=int, required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--kgrag", action="store_true", help="run only the augmented policy")
    mode.add_argument("--compare", action="store_true", help="run baseline and augmented policies")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--hints", choices=["scripted", "lexical"], default="scripted")
    p.add_argument("--hint-accuracy", type=float, default=0.7)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--providers", choices=["fixture", "http"], default="fixture")
    p.add_argument("--embed-model", default="default")
    return ap


# --- provider wiring -----------------------------------------------------


_HASH_MODEL = re.compile(r"^hash-ngram(\d+)-d(\d+)-s(-?\d+)$")


def embedder_for(model_id: str, providers: str, embed_model: str = "default"):
    """An embedder able to query a database built with ``model_id``."""
    m = _HASH_MODEL.match(model_id)
    if m:
        return HashingEmbedder(int(m.group(2)), int(m.group(3)), int(m.group(1)))
    if providers == "http":
        return HttpEmbedder(model=model_id if embed_model == "default" else embed_model)
    raise UsageError(f"no local embedder for model {model_id!r}; use --providers http")


def _build_providers(args, utg, cache: ResponseCache | None):
    if args.providers == "http":
        chat = HttpChat(model=args.llm_model)
        logits = chat
        embedder = HttpEmbedder(model=args.embed_model)
    else:
        embedder = HashingEmbedder(args.embed_dim)
        rule_chat, rule_logits = AppKnowledgeChat(utg), MilestoneMatchLogits()
        if args.fixtures:
            chat, logits = load_fixture(
                args.fixtures, strict=args.strict_fixtures,
                chat_fallback=rule_chat, logit_fallback=rule_logits)
        elif args.strict_fixtures:
            raise UsageError("--strict-fixtures needs --fixtures")
        else:
            chat, logits = rule_chat, rule_logits
    if cache is not None:
        chat = CachedChat(chat, cache, f"{args.providers}:{getattr(args, 'llm_model', '')}")
        logits = CachedLogits(logits, cache, f"{args.providers}:{getattr(args, 'llm_model', '')}")
        embedder = CachedEmbedder(embedder, cache)
    return chat, logits, embedder


# --- subcommands ---------------------------------------------------------


def cmd_validate(args) -> int:
    text = args.utg.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        print(f"ParseError: invalid JSON: {exc}")
        return EXIT_FINDINGS
    try:
        utg = utg_from_dict(doc, strict=args.strict)
    except ParseError as exc:
        print(f"ParseError: {exc}")
        return EXIT_FINDINGS
    found = validate_utg(utg, include_warnings=args.warnings)
    for v in found:
        print(f"{v.severity.upper()} {v.code} {v.location}: {v.message}")
    errors = [v for v in found if v.severity == "error"]
    if not errors:
        print(f"ok: {len(utg.screens)} screens, {len(utg.transitions)} transitions")
    return EXIT_FINDINGS if errors else EXIT_OK


def cmd_generate(args) -> int:
    spec = BenchSpec(args.seed, args.screens, args.max_out_degree, args.goal_depth,
                     args.fragmentation, args.tasks, args.min_goal_depth, not args.no_back_edges)
    try:
        utg, tasks = generate_bench(spec)
    except GenerationError as exc:
        raise UsageError(str(exc)) from exc
    args.utg.write_text(dumps_utg(utg), encoding="utf-8")
    args.suite.write_text(dumps_tasks(tasks), encoding="utf-8")
    print(f"seed {args.seed}: {len(utg.screens)} screens, {len(utg.transitions)} transitions, "
          f"{len(tasks)} tasks")
    return EXIT_OK


def cmd_build(args) -> int:
    utg = load_utg(args.utg, strict=args.strict)
    if args.top_k is not None and args.top_k < 1:
        raise UsageError("--top-k must be positive")
    cfg = SearchConfig(args.threshold, args.step_size, args.max_depth, args.top_k, args.batch_size)
    out = args.db
    stem = out.with_suffix("")
    cache = None if args.no_cache else ResponseCache(Path(f"{stem}.cache.json"))
    try:
        chat, logits, embedder = _build_providers(args, utg, cache)
    except ProviderError as exc:
        print(f"stage providers failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    try:
        res = build_knowledge(utg, chat, logits, embedder, cfg,
                              per_screen_limit=args.per_screen_limit, key_mode=args.key_mode)
    except StageError as exc:
        partial = exc.partial
        if partial.intents:
            save_intents(partial.intents, f"{stem}.intents.jsonl")
        if partial.records:
            save_records(partial.records, f"{stem}.results.jsonl")
        if cache is not None:
            cache.save()
        print(f"stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    out.parent.mkdir(parents=True, exist_ok=True)
    save_intents(res.intents, f"{stem}.intents.jsonl")
    save_records(res.records, f"{stem}.results.jsonl")
    save_db(res.db, out)
    if cache is not None:
        cache.save()
    manifest = {
        "seed": args.seed,
        "utg": args.utg.name,
        "providers": args.providers,
        "key_mode": args.key_mode,
        "model_id": res.db.model_id,
        "search": {"threshold": cfg.threshold, "step_size": cfg.step_size, "max_depth": cfg.max_depth,
                   "top_k": cfg.top_k, "batch_size": cfg.batch_size},
        "stats": res.stats,
    }
    Path(f"{stem}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    for key in ("intents", "searched", "intents_with_trajectory", "records", "summary_fallbacks", "entries"):
        print(f"{key}: {res.stats.get(key, 0)}")
    if not res.db.entries:
        log.warning("knowledge database is empty")
    return EXIT_OK


def cmd_query(args) -> int:
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    dbs = load_dbs(args.db)
    if not dbs:
        raise UsageError(f"no databases found at {args.db}")
    models = {db.model_id for db in dbs}
    if len(models) > 1:
        raise UsageError(f"databases use different embedding models: {sorted(models)}")
    embedder = embedder_for(dbs[0].model_id, args.providers, args.embed_model)
    hits = query_many(dbs, args.instruction, args.k, embedder)
    if args.json:
        print(json.dumps([{"similarity": h.similarity, "entry_id": h.entry.entry_id,
                           "intent": h.entry.intent_text, "summary": h.entry.summary,
                           "steps": len(h.entry.trajectory)} for h in hits], indent=2))
        return EXIT_OK
    for rank, h in enumerate(hits, 1):
        print(f"{rank}. {h.similarity:.6f}  {h.entry.intent_text}  [{h.entry.entry_id}]")
        print(f"   {h.entry.summary}")
        print(f"   steps: {len(h.entry.trajectory)}  "
              f"{' > '.join(h.entry.trajectory.screens)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if (args.kgrag or args.compare) and args.db is None:
        raise UsageError("--kgrag/--compare need --db")
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    utg = load_utg(args.utg)
    tasks = load_tasks(args.suite)
    bad = [(t.task_id, p) for t in tasks for p in t.problems(utg)]
    if bad:
        raise UsageError(f"task {bad[0][0]} does not fit the graph: {bad[0][1]}")
    db = embedder = None
    if args.db is not None:
        db = load_db(args.db)
        embedder = embedder_for(db.model_id, args.providers, args.embed_model)

    def base_policy():
        hints = (ScriptedHints.for_tasks(utg, tasks, accuracy=args.hint_accuracy, seed=args.seed)
                 if args.hints == "scripted" else LexicalHints())
        return HintGreedyPolicy(hints, seed=args.seed)

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    if not args.kgrag:
        reports.append(run_suite(tasks, utg, base_policy(), label="baseline"))
    if args.kgrag or args.compare:
        reports.append(run_suite(tasks, utg, KgRagPolicy(base_policy()), db=db, embedder=embedder,
                                 k=args.k, label="kgrag"))
    csv_parts = []
    for r in reports:
        body = r.to_dict()
        body["seed"] = args.seed
        (out / f"{r.label}.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
        (out / f"{r.label}.txt").write_text(render_table([r]), encoding="utf-8")
        csv = r.to_csv()
        csv_parts.append(csv if not csv_parts else csv.split("\n", 1)[1])
    (out / "episodes.csv").write_text("".join(csv_parts), encoding="utf-8")
    if args.compare:
        cmp = compare_runs(reports[0], reports[1])
        body = cmp.to_dict()
        body["seed"] = args.seed
        (out / "comparison.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
        table = cmp.render()
        (out / "comparison.txt").write_text(table, encoding="utf-8")
        print(table, end="")
    else:
        print(render_table(reports), end="")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "generate": cmd_generate,
    "build": cmd_build,
    "query": cmd_query,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"provider failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except KgRagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
