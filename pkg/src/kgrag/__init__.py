"""Turn UI transition graphs into a retrieval knowledge base for GUI agents.

Offline: propose intents per screen, split them into milestones, search the
graph for trajectories that complete them, summarize and embed the results.
Online: retrieve the closest intent-trajectory pairs for an instruction and
let an agent replay them. A simulator measures success rate, decision
accuracy and average steps against a non-augmented baseline.
"""

__version__ = "0.1.0"

from .bench import BenchSpec, generate_bench
from .intents import Intent, decompose_intent, generate_intents
from .knowledge import KnowledgeDb, build_db, load_db, query, save_db
from .pathfinder import SearchConfig, expand_frontier, llm_bfs_search, summarize_trajectory
from .scoring import compare, proximity_score, softmax_slice, trajectory_score
from .simulator import compare_runs, run_episode, run_suite
from .utg import Task, Trajectory, Utg, load_utg, save_utg, validate_utg

__all__ = [
    "BenchSpec", "Intent", "KnowledgeDb", "SearchConfig", "Task", "Trajectory", "Utg",
    "build_db", "compare", "compare_runs", "decompose_intent", "expand_frontier",
    "generate_bench", "generate_intents", "llm_bfs_search", "load_db", "load_utg",
    "proximity_score", "query", "run_episode", "run_suite", "save_db", "save_utg",
    "softmax_slice", "summarize_trajectory", "trajectory_score", "validate_utg",
]
