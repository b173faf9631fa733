import random

import pytest

from conftest import random_program
from infwidth import corpus, dsl
from infwidth import exprs as E
from infwidth.errors import DimClassConflict, ParseError
from infwidth.finite import DiagFactor, MatFactor
from infwidth.program import MatMul, Moment, Nonlin, Program

SEMICIRCLE_STEP = """
matrix W : c x c var 0.5
vector z0 : c
x1 = matmul W z0
y1 = matmul W^T z0
z1 = nonlin x1 + x2 (x1, y1)
"""


def test_parse_semicircle_step():
    prog = dsl.parse_program(SEMICIRCLE_STEP)
    assert len(prog.matrices) == 1 and len(prog.vectors) == 1
    assert [type(i) for i in prog.instructions] == [MatMul, MatMul, Nonlin]
    assert prog.instructions[1].transposed
    assert prog.instructions[2].expr == E.add(E.x(0), E.x(1))


def test_empty_source_is_empty_program():
    assert dsl.parse_program("") == Program()
    assert dsl.parse_program("# only a comment\n\n") == Program()


def test_missing_operand_is_syntax_error():
    with pytest.raises(ParseError) as err:
        dsl.parse_program("matrix W : c x c var 1.0\nvector v : c\nx = matmul W\n")
    assert err.value.line == 3


def test_error_positions_reported():
    with pytest.raises(ParseError) as err:
        dsl.parse_program("vector v : c\nz = nonlin x1 + (v)\n")
    assert err.value.line == 2


def test_build_errors_surface_from_source():
    with pytest.raises(DimClassConflict):
        dsl.parse_program(
            "matrix W : a x b var 1.0\nvector v : a\nx = matmul W v\n"
        )


def test_scalar_rule_roundtrip():
    text = "scalar th limit 0.0 rule u / (1.0 + u)\nvector v : c\n"
    prog = dsl.parse_program(text)
    assert prog.scalar("th").rule.value(4) == pytest.approx(0.25 / 1.25)
    again = dsl.parse_program(dsl.print_program(prog))
    assert again == prog


def test_moment_and_params_roundtrip():
    text = (
        "vector v : c\n"
        "scalar th limit 0.5\n"
        "m = moment x1^2 (v)\n"
        "z = nonlin p1 * x1 - p2 (v ; th, m)\n"
    )
    prog = dsl.parse_program(text)
    assert isinstance(prog.instructions[0], Moment)
    assert prog.instructions[1].params == ("th", "m")
    assert dsl.parse_program(dsl.print_program(prog)) == prog


def test_whitespace_perturbation_same_canonical_form():
    messy = SEMICIRCLE_STEP.replace(" = ", "   =  ").replace(" : ", "  :   ")
    messy = "\n\n" + messy.replace("x1 + x2", "x1   +   x2") + "\n\n"
    assert dsl.print_program(dsl.parse_program(messy)) == dsl.print_program(
        dsl.parse_program(SEMICIRCLE_STEP)
    )


def test_renamed_symbols_print_verbatim():
    text = SEMICIRCLE_STEP.replace("W", "Mat").replace("z0", "start")
    prog = dsl.parse_program(text)
    out = dsl.print_program(prog)
    assert "Mat" in out and "start" in out and "W " not in out


def test_bundled_corpus_roundtrip():
    for name in corpus.PROGRAM_NAMES:
        prog = corpus.load_program(name)
        assert dsl.parse_program(dsl.print_program(prog)) == prog


def test_fuzz_corpus_roundtrip_50():
    rng = random.Random(2024)
    for _ in range(50):
        prog = random_program(rng)
        text = dsl.print_program(prog)
        assert dsl.parse_program(text) == prog, text


def test_word_file_parsing_groups_and_sums():
    groups = dsl.parse_word_factors(
        "mat W\nmat W^T\n\ndiag xv step(x1)\n\nmat W\n+\nmat W^T\n"
    )
    assert len(groups) == 3
    assert groups[0] == [[MatFactor("W"), MatFactor("W", True)]]
    assert groups[1] == [[DiagFactor(("xv",), E.step(E.x(0)))]]
    assert groups[2] == [[MatFactor("W")], [MatFactor("W", True)]]
    # collection change without a blank line still starts a new group
    auto = dsl.parse_word_factors("mat W\ndiag xv step(x1)\n")
    assert len(auto) == 2


def test_word_file_roundtrip():
    for name in corpus.WORD_NAMES:
        groups = dsl.parse_word_factors(corpus.word_text(name))
        assert dsl.parse_word_factors(dsl.print_word_factors(groups)) == groups
