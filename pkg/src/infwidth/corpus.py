"""Bundled example programs, alternating words, and verification test pairs."""

from __future__ import annotations

from importlib import resources

from . import dsl
from .freeness import AlternatingWord, word_from_groups
from .program import Program

PROGRAM_NAMES = (
    "semicircle",
    "mp_half",
    "mp_one",
    "mp_two",
    "atav",
    "giabreak",
    "fipbase",
)

WORD_NAMES = ("word_a", "word_b", "negative")

# test pairs for the consistency sweep: program -> [(expr text, vectors)]
VERIFY_TESTS: dict[str, list[tuple[str, list[str]]]] = {
    "semicircle": [
        ("x1 * x2", ["z0", "z1"]),
        ("x1 * x2", ["z0", "z2"]),
        ("x1 * x2", ["z0", "z4"]),
        ("x1 * x2", ["z0", "z6"]),
    ],
    "mp_half": [
        ("x1 * x2", ["v0", "v1"]),
        ("x1 * x2", ["v0", "v2"]),
        ("x1 * x2", ["v0", "v3"]),
        ("x1 * x2", ["v0", "v4"]),
    ],
    "mp_one": [
        ("x1 * x2", ["v0", "v2"]),
        ("x1 * x2", ["v0", "v4"]),
    ],
    "mp_two": [
        ("x1 * x2", ["v0", "v2"]),
        ("x1 * x2", ["v0", "v4"]),
    ],
    "atav": [
        ("x1 * x2", ["v", "x"]),
        ("x1^2", ["x"]),
    ],
    "giabreak": [
        ("x1", ["dx1"]),
        ("x1^2", ["h2"]),
    ],
}


def program_text(name: str) -> str:
    if name not in PROGRAM_NAMES:
        raise KeyError(f"no bundled program {name!r}; have {PROGRAM_NAMES}")
    return resources.files("infwidth").joinpath(f"programs/{name}.ntp").read_text()


def load_program(name: str) -> Program:
    return dsl.parse_program(program_text(name))


def word_text(name: str) -> str:
    if name not in WORD_NAMES:
        raise KeyError(f"no bundled word {name!r}; have {WORD_NAMES}")
    return resources.files("infwidth").joinpath(f"words/{name}.word").read_text()


def load_word(name: str) -> AlternatingWord:
    return word_from_groups(dsl.parse_word_factors(word_text(name)))
