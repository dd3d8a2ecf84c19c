import logging
from dataclasses import replace

import pytest

from kgrag.errors import DecompositionError
from kgrag.heuristics import AppKnowledgeChat, completed_milestones, milestone_reached
from kgrag.intents import Intent, decompose_intent, generate_intents, load_intents, save_intents
from kgrag.prompts import DECOMPOSE_SYSTEM, decompose_prompt, parse_list
from kgrag.providers import ScriptedChat
from kgrag.utg import Screen


def _scripted_decomposer(goal, reply):
    chat = ScriptedChat()
    chat.add(DECOMPOSE_SYSTEM, decompose_prompt(goal), reply)
    return chat


def test_privacy_policy_decomposes_into_four_milestones(tomato):
    ms = decompose_intent("view privacy policy", AppKnowledgeChat(tomato))
    assert ms == ["Open My Profile", "Open Settings", "Open About Tomato", "Open Privacy Policy"]


def test_order_is_preserved_as_produced():
    reply = "1. Open Settings\n2. Open My Profile\n3. Open Privacy Policy"
    ms = decompose_intent("view privacy policy", _scripted_decomposer("view privacy policy", reply))
    assert ms == ["Open Settings", "Open My Profile", "Open Privacy Policy"]


def test_duplicate_milestones_are_collapsed():
    reply = "1. Open Settings\n2. Open Settings\n3. Open About"
    ms = decompose_intent("see about", _scripted_decomposer("see about", reply))
    assert ms == ["Open Settings", "Open About"]


def test_prose_reply_is_a_decomposition_error():
    reply = "Sure! To get there you would first have to think about what the user actually wants here:"
    with pytest.raises(DecompositionError):
        decompose_intent("see about", _scripted_decomposer("see about", reply))


@pytest.mark.parametrize("text,items", [
    ("Here you go:\n1) Open A\n2) Open B\nThanks", ["Open A", "Open B"]),
    ("- Open A\n* Open B", ["Open A", "Open B"]),
    ("Open A\nOpen B", ["Open A", "Open B"]),
    ("Step 1: Open A\nStep 2: Open B", ["Open A", "Open B"]),
])
def test_parse_list_formats(text, items):
    assert parse_list(text) == items


def test_empty_goal_rejected(tomato):
    with pytest.raises(ValueError):
        decompose_intent("  ", AppKnowledgeChat(tomato))


def test_generate_intents_on_fixture(tomato, caplog):
    caplog.set_level(logging.WARNING)
    intents = generate_intents(tomato, AppKnowledgeChat(tomato))
    assert [i.intent_id for i in intents] == ["about#0", "privacy#0", "profile#0", "settings#0"]
    by_goal = {i.goal_text: i for i in intents}
    assert by_goal["view Privacy Policy"].m == 4
    assert all(i.reachable for i in intents)
    # the launch screen has no breadcrumb and proposes nothing
    assert "SkippedScreen" in caplog.text and "home" in caplog.text


def test_goals_are_deduplicated_across_screens(tomato):
    twin = replace(tomato.screen("about"), screen_id="about2")
    utg = replace(tomato, screens=tomato.screens + (twin,))
    intents = generate_intents(utg, AppKnowledgeChat(utg))
    assert sum(i.goal_text == "view About Tomato" for i in intents) == 1


def test_unreachable_screens_are_flagged(tomato):
    island = Screen("zz", "Island. Hidden page. Path: Island")
    utg = replace(tomato, screens=tomato.screens + (island,))
    intents = generate_intents(utg, AppKnowledgeChat(utg))
    assert [i.reachable for i in intents if i.source_screen == "zz"] == [False]


def test_parallel_generation_matches_serial(tomato):
    chat = AppKnowledgeChat(tomato)
    assert generate_intents(tomato, chat, workers=4) == generate_intents(tomato, chat)


def test_intents_round_trip(tmp_path, tomato):
    intents = generate_intents(tomato, AppKnowledgeChat(tomato))
    save_intents(intents, tmp_path / "i.jsonl")
    assert load_intents(tmp_path / "i.jsonl") == intents


def test_intent_invariants():
    with pytest.raises(ValueError):
        Intent("a", "s", "goal", ())
    with pytest.raises(ValueError):
        Intent("a", "s", "goal", ("x", "x"))


def test_in_order_milestone_matching():
    ms = ["Open My Profile", "Open Settings"]
    assert milestone_reached("Open Settings", "Settings")
    assert completed_milestones(ms, ["Home", "My Profile", "Settings"]) == 2
    # out of order visits only count the prefix
    assert completed_milestones(ms, ["Settings", "My Profile"]) == 1
    assert completed_milestones(ms, ["Home"]) == 0


def test_identical_proposals_collapse_to_one(tomato):
    from kgrag.prompts import INTENT_SYSTEM, intents_prompt
    home = tomato.screen("home")
    chat = ScriptedChat({}, strict=False, fallback=AppKnowledgeChat(tomato))
    chat.add(INTENT_SYSTEM, intents_prompt(tomato.meta.app_name, home, 5),
             "1. View Privacy Policy\n2. view privacy policy\n3. view  privacy policy!")
    intents = generate_intents(replace(tomato, screens=(home,), transitions=()), chat)
    assert [i.goal_text for i in intents] == ["View Privacy Policy"]


def test_empty_graph_has_no_intents(tomato):
    assert generate_intents(replace(tomato, screens=(), transitions=()), AppKnowledgeChat()) == []
