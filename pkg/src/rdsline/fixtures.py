"""Bundled example systems."""
from __future__ import annotations

import json
from importlib import resources

from .system import system_from_json

FIXTURES = {
    "class1": "class1_asymmetric_walk.json",
    "class2": "class2_kinked_walk.json",
    "class3": "class3_symmetric_walk.json",
    "class4": "class4_walk_with_doubling.json",
    "sin": "sin_perturbation.json",
}
MONSTER_FIXTURES = {
    "monster-alternating": "monster_alternating.json",
    "monster-symmetric": "monster_symmetric.json",
}


def fixture_json(name: str) -> dict:
    try:
        fname = {**FIXTURES, **MONSTER_FIXTURES}[name]
    except KeyError:
        known = sorted(FIXTURES) + sorted(MONSTER_FIXTURES)
        raise KeyError(f"unknown fixture {name!r}; known: {known}") from None
    text = resources.files("rdsline").joinpath("fixtures", fname).read_text()
    return json.loads(text)


def load_fixture(name: str):
    """A RandomSystem, or a MonsterSystem for the monster fixtures."""
    obj = fixture_json(name)
    if obj.get("kind") == "monster":
        from .monster import monster_from_json

        return monster_from_json(obj)
    return system_from_json(obj)
