import random

import numpy as np
import pytest

from conftest import random_program
from infwidth import exprs as E
from infwidth.errors import (
    ArityMismatch,
    DimClassConflict,
    DuplicateSymbol,
    UndeclaredSymbol,
)
from infwidth.program import (
    CovDecl,
    MatMul,
    MatrixDecl,
    Nonlin,
    Program,
    RatioDecl,
    ScalarDecl,
    ScalarRule,
    TieDecl,
    VectorDecl,
    build_program,
    compute_cdc,
)


def add2():
    return E.add(E.x(0), E.x(1))


def test_semicircle_step_program_single_cdc():
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 0.5),
            VectorDecl("v", "c"),
            MatMul("x", "W", False, "v"),
            MatMul("y", "W", True, "v"),
            Nonlin("z", add2(), ("x", "y")),
        ]
    )
    assert len(compute_cdc(prog)) == 1
    assert prog.gvars == {"v", "x", "y"}


def test_empty_program_is_valid():
    prog = build_program([])
    assert prog == Program()
    assert compute_cdc(prog) == {}


def test_matmul_wrong_class_conflicts():
    with pytest.raises(DimClassConflict):
        build_program(
            [
                MatrixDecl("W", "a", "b", 1.0),
                VectorDecl("v", "a"),
                MatMul("x", "W", False, "v"),  # Wv needs input in class b
            ]
        )


def _mlp(ties: bool, layers: int = 3):
    decls = [VectorDecl("h1", "l1")]
    for l in range(2, layers + 1):
        decls.append(MatrixDecl(f"W{l}", f"l{l}", f"l{l-1}", 1.0))
    for l in range(1, layers):
        decls.append(Nonlin(f"x{l}", E.relu(E.x(0)), (f"h{l}",)))
        decls.append(MatMul(f"h{l+1}", f"W{l+1}", False, f"x{l}"))
    if ties:
        decls += [TieDecl("h1", f"h{l}") for l in range(2, layers + 1)]
    return build_program(decls)


def test_cdc_mlp_distinct_layers():
    prog = _mlp(ties=False)
    parts = compute_cdc(prog)
    assert len(parts) == 3
    assert {frozenset(p) for p in parts.values()} == {
        frozenset({"h1", "x1"}),
        frozenset({"h2", "x2"}),
        frozenset({"h3"}),
    }


def test_cdc_mlp_with_ties_single_class():
    assert len(compute_cdc(_mlp(ties=True))) == 1


def test_cdc_square_matrix_single_class():
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 1.0),
            VectorDecl("v", "c"),
            MatMul("x", "W", False, "v"),
            MatMul("y", "W", True, "x"),
        ]
    )
    assert len(compute_cdc(prog)) == 1


def test_cdc_idempotent_and_order_independent():
    base = [
        RatioDecl("b", 2.0),
        MatrixDecl("W", "a", "b", 1.0),
        VectorDecl("v", "b"),
        VectorDecl("w", "a"),
        TieDecl("v", "q"),
        MatMul("x", "W", False, "v"),
        Nonlin("q", E.tanh(E.x(0)), ("w",)),
    ]
    # ties may reference later vectors; validation happens on the closure
    prog1 = build_program(base)
    assert compute_cdc(prog1) == compute_cdc(prog1)
    # permute declaration blocks (keeping instruction order valid)
    perm = [base[1], base[0], base[3], base[2], base[5], base[6], base[4]]
    prog2 = build_program(perm)
    assert compute_cdc(prog1) == compute_cdc(prog2)


def test_tie_merges_ratio_conflict():
    with pytest.raises(DimClassConflict):
        build_program(
            [
                RatioDecl("a", 1.0),
                RatioDecl("b", 2.0),
                VectorDecl("v", "a"),
                VectorDecl("w", "b"),
                TieDecl("v", "w"),
            ]
        )


def test_gvar_set_exact():
    rng = random.Random(5)
    for _ in range(20):
        prog = random_program(rng)
        expected = {v.name for v in prog.vectors} | {
            i.out for i in prog.instructions if isinstance(i, MatMul)
        }
        assert prog.gvars == expected


def test_duplicate_symbol():
    with pytest.raises(DuplicateSymbol):
        build_program([VectorDecl("v", "a"), VectorDecl("v", "a")])


def test_use_before_definition():
    # initial declarations are hoisted (they are the sampling setup), but a
    # derived vector must be produced before any instruction consumes it
    with pytest.raises(UndeclaredSymbol):
        build_program(
            [
                MatrixDecl("W", "a", "a", 1.0),
                VectorDecl("v", "a"),
                MatMul("x", "W", False, "q"),
                Nonlin("q", E.tanh(E.x(0)), ("v",)),
            ]
        )
    with pytest.raises(UndeclaredSymbol):
        build_program([VectorDecl("v", "a"), Nonlin("z", E.x(0), ("v",), ("th",))])


def test_nonlin_arity_checked():
    with pytest.raises(ArityMismatch):
        build_program(
            [VectorDecl("v", "a"), Nonlin("z", E.add(E.x(0), E.x(1)), ("v",))]
        )


def test_nonlin_inputs_must_share_class():
    with pytest.raises(DimClassConflict):
        build_program(
            [
                VectorDecl("v", "a"),
                VectorDecl("w", "b"),
                Nonlin("z", add2(), ("v", "w")),
            ]
        )


def test_cov_requires_same_class():
    with pytest.raises(DimClassConflict):
        build_program(
            [VectorDecl("v", "a"), VectorDecl("w", "b"), CovDecl("v", "w", 0.5)]
        )


def test_init_block_psd_repair_accepts_near_psd():
    # correlation exactly 1 with a tiny negative eigenvalue from rounding
    prog = build_program(
        [
            VectorDecl("v", "a"),
            VectorDecl("w", "a"),
            CovDecl("v", "w", 1.0 + 1e-14),
        ]
    )
    names, mean, cov = prog.init_block(prog.cdc("v"))
    assert set(names) == {"v", "w"}


def test_init_block_rejects_far_from_psd():
    with pytest.raises(ValueError):
        build_program(
            [VectorDecl("v", "a"), VectorDecl("w", "a"), CovDecl("v", "w", 2.0)]
        )


def test_scalar_rule_limit_validation():
    # u/(1+u) -> 0: consistent
    rule = ScalarRule(E.x(0), E.add(E.const(1.0), E.x(0)))
    prog = build_program([ScalarDecl("th", 0.0, rule)])
    assert prog.scalar("th").rule.value(10) == pytest.approx((0.1) / 1.1)
    # declared limit inconsistent with the rule
    with pytest.raises(ValueError):
        build_program([ScalarDecl("th", 1.0, rule)])


def test_matrix_ratio():
    prog = build_program(
        [
            RatioDecl("m", 2.0),
            MatrixDecl("A", "m", "n", 1.0),
            VectorDecl("v", "m"),
            MatMul("u", "A", True, "v"),
        ]
    )
    assert prog.matrix_ratio("A") == pytest.approx(2.0)
    assert prog.matrix_ratio("A", transposed=True) == pytest.approx(0.5)


def test_random_programs_build_and_roundtrip_cdc():
    rng = random.Random(11)
    for _ in range(30):
        prog = random_program(rng)
        parts = compute_cdc(prog)
        names = {n for group in parts.values() for n in group}
        assert names == set(prog.vector_names)
