import math
import warnings

import numpy as np
import pytest

from infwidth import corpus
from infwidth import exprs as E
from infwidth.errors import NonPSDExtension, UnknownSymbol
from infwidth.laws import catalan, semicircle_b_coeff
from infwidth.limits import LimitState, build_limit, build_replicated
from infwidth.numerics import hermite_pair_expectation
from infwidth.program import (
    CovDecl,
    MatMul,
    MatrixDecl,
    Moment,
    Nonlin,
    ScalarDecl,
    ScalarRule,
    VectorDecl,
    build_program,
)

N = 60_000
XY = E.mul(E.x(0), E.x(1))


@pytest.fixture(scope="module")
def semicircle_rep():
    return build_replicated(
        corpus.load_program("semicircle"), n_samples=2 * N, seed=17, replicas=6
    )


@pytest.fixture(scope="module")
def semicircle_state(semicircle_rep):
    return semicircle_rep.states[0]


@pytest.fixture(scope="module")
def mp_states():
    return {
        rho: build_replicated(corpus.load_program(name), n_samples=2 * N, seed=23, replicas=6)
        for rho, name in [(0.5, "mp_half"), (1.0, "mp_one"), (2.0, "mp_two")]
    }


def test_mlp_hat_variance_and_independence():
    phi = E.tanh(E.x(0))
    prog = build_program(
        [
            VectorDecl("h1", "l1"),
            MatrixDecl("W2", "l2", "l1", 1.0),
            Nonlin("x1", phi, ("h1",)),
            MatMul("h2", "W2", False, "x1"),
        ]
    )
    st = build_limit(prog, n_samples=N, seed=5)
    var_x1 = float(np.mean(st.cols["x1"] ** 2))
    var_h2 = float(np.mean(st.cols["h2"] ** 2))
    assert var_h2 == pytest.approx(var_x1, rel=6 / math.sqrt(N) * 4)
    corr = float(np.corrcoef(st.cols["h2"], st.cols["h1"])[0, 1])
    assert abs(corr) <= 6 / math.sqrt(N)


def test_moment_of_constant():
    prog = build_program(
        [VectorDecl("v", "c"), Moment("m", E.const(5.0), ("v",))]
    )
    st = build_limit(prog, n_samples=1000, seed=0)
    assert st.scalar_limit("m") == (5.0, 0.0)


def test_first_family_member_is_unconditional_gaussian():
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 2.0),
            VectorDecl("v", "c"),
            MatMul("g", "W", False, "v"),
        ]
    )
    st = build_limit(prog, n_samples=N, seed=2)
    var = float(np.mean(st.gauss_cols["g"] ** 2))
    assert var == pytest.approx(2.0, rel=6 / math.sqrt(N) * 3)


def test_duplicate_product_is_deterministic_copy():
    # applying the same matrix to the same input twice: conditional variance 0
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 1.0),
            VectorDecl("v", "c"),
            MatMul("g1", "W", False, "v"),
            MatMul("g2", "W", False, "v"),
        ]
    )
    st = build_limit(prog, n_samples=10_000, seed=3)
    assert np.allclose(st.gauss_cols["g1"], st.gauss_cols["g2"], atol=1e-10)
    assert any("DegenerateGVar" in d for d in st.diagnostics)


def test_semicircle_second_step_hats_uncorrelated(semicircle_state):
    st = semicircle_state
    corr = float(np.corrcoef(st.gauss_cols["x2"], st.gauss_cols["x1"])[0, 1])
    assert abs(corr) <= 6 / math.sqrt(st.n_samples)


def test_family_covariance_tracks_ensemble(semicircle_state):
    st = semicircle_state
    for family in st.families.values():
        cols = np.column_stack([st.gauss_cols[nm] for nm in family.outputs])
        emp = cols.T @ cols / st.n_samples
        scale = max(1.0, float(np.max(np.abs(family.cov))))
        assert np.max(np.abs(emp - family.cov)) <= 6 / math.sqrt(st.n_samples) * scale * 3


def test_cross_family_columns_uncorrelated(semicircle_state):
    st = semicircle_state
    fams = list(st.families.values())
    for i in range(len(fams)):
        for j in range(i + 1, len(fams)):
            for a in fams[i].outputs[:3]:
                for b in fams[j].outputs[:3]:
                    corr = float(np.corrcoef(st.gauss_cols[a], st.gauss_cols[b])[0, 1])
                    assert abs(corr) <= 6 / math.sqrt(st.n_samples)


def test_zdot_atav_coefficient_is_one():
    st = build_limit(corpus.load_program("atav"), n_samples=N, seed=29)
    ys, coeffs, ses = st.correction_coeffs("x")
    assert ys == ("v",)
    assert abs(coeffs[0] - 1.0) <= 3.0 * ses[0]


def test_zdot_fresh_matrix_empty():
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 1.0),
            MatrixDecl("V", "c", "c", 1.0),
            VectorDecl("v", "c"),
            MatMul("a", "W", False, "v"),
            MatMul("b", "V", False, "a"),
        ]
    )
    st = build_limit(prog, n_samples=5000, seed=0)
    ys, coeffs, _ = st.correction_coeffs("b")
    assert ys == () and coeffs.size == 0


def test_zdot_gia_break_coefficient_two():
    st = build_replicated(corpus.load_program("giabreak"), n_samples=2 * N, seed=202, replicas=10)
    ys, coeffs, ses = st.correction_coeffs("dx1")
    assert ys == ("one",)
    assert abs(coeffs[0] - 2.0) <= 3.0 * ses[0]
    mean, se = st.expect(E.x(0), ["dx1"])
    assert abs(mean - 2.0) <= 3.0 * se


def test_zdot_mp_coefficients(mp_states):
    for rho, st in mp_states.items():
        ys, coeffs, ses = st.correction_coeffs("u2")
        assert ys == ("u1",)
        assert abs(coeffs[0] - rho) <= 3.0 * ses[0], rho
        # and the forward product picks up (rho, 1) on (v0, v1)
        ys2, c2, se2 = st.correction_coeffs("v2")
        assert ys2 == ("v0", "v1")
        assert abs(c2[0] - rho) <= 3.0 * se2[0]
        assert abs(c2[1] - 1.0) <= 3.0 * se2[1]


def test_semicircle_zdot_matches_catalan_weights(semicircle_rep):
    # coefficient of the correction of x^{t+1} on z^s is b^t_{s+1} / 2
    st = semicircle_rep
    for t_out, expect_rs in [("x3", [1, 0, 1]), ("x4", [0, 2, 0, 1])]:
        t = int(t_out[1]) - 1
        ys, coeffs, ses = st.correction_coeffs(t_out)
        assert ys == tuple(f"z{s}" for s in range(t))
        for s, (a, se) in enumerate(zip(coeffs, ses)):
            want = 0.5 * semicircle_b_coeff(t, s + 1)
            assert abs(a - want) <= 3.0 * se + 1e-12, (t_out, s)


def test_expect_semicircle_catalan(semicircle_rep):
    st = semicircle_rep
    for k in range(0, 4):
        mean, se = st.expect(XY, ["z0", f"z{2 * k}"]) if k else (1.0, 0.0)
        assert abs(mean - catalan(k)) <= 3.0 * se + 1e-12


def test_expect_mp_second_moment(mp_states):
    st = mp_states[1.0]
    mean, se = st.expect(XY, ["v0", "v2"])
    assert abs(mean - 2.0) <= 3.0 * se


def test_scalar_limits():
    rule = ScalarRule(E.x(0))  # theta = 1/n -> 0
    prog = build_program(
        [
            VectorDecl("v", "c"),
            ScalarDecl("th", 0.0, rule),
            Moment("m2", E.pow_(E.x(0), 2), ("v",)),
        ]
    )
    st = build_limit(prog, n_samples=N, seed=4)
    assert st.scalar_limit("th") == (0.0, 0.0)
    m, se = st.scalar_limit("m2")
    assert abs(m - 1.0) <= 3.0 * se
    with pytest.raises(UnknownSymbol):
        st.scalar_limit("nope")


def test_scalar_limit_wwt_trace():
    # (1/n) u^T W W^T u converges to the first spectral moment 1
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 1.0),
            VectorDecl("u", "c"),
            MatMul("a", "W", True, "u"),
            MatMul("b", "W", False, "a"),
            Moment("tau", XY, ("u", "b")),
        ]
    )
    st = build_limit(prog, n_samples=N, seed=6)
    tau, se = st.scalar_limit("tau")
    assert abs(tau - 1.0) <= 3.0 * se


def test_nonpsd_extension_rejected():
    prog = build_program(
        [
            MatrixDecl("W", "c", "c", 1.0),
            VectorDecl("v", "c"),
            MatMul("g", "W", False, "v"),
        ]
    )
    st = build_limit(prog, n_samples=1000, seed=0)
    family = st.families[("W", False)]
    with pytest.raises(NonPSDExtension):
        st.extend_family(family, np.array([10.0]), 1.0, label="bad")


def test_parameterized_nonlin_uses_limit_values():
    prog = build_program(
        [
            VectorDecl("v", "c"),
            Moment("m2", E.pow_(E.x(0), 2), ("v",)),
            Nonlin("z", E.mul(E.p(0), E.x(0)), ("v",), ("m2",)),
            Moment("out", E.pow_(E.x(0), 2), ("z",)),
        ]
    )
    st = build_limit(prog, n_samples=N, seed=9)
    out, se = st.scalar_limit("out")
    assert abs(out - 1.0) <= 4.0 * se  # E (m2 v)^2 -> 1 since m2 -> 1


def test_hermite_oracle_matches_ensemble_expect():
    # independent oracle for 2-variable expectations on correlated unit nodes
    cases = {
        "identity": E.x(0),
        "square": E.pow_(E.x(0), 2),
        "step": E.step(E.x(0)),
        "tanh": E.tanh(E.x(0)),
        "relu_clamped": E.clamp(E.x(0), 0.0, 1.0),
    }
    for rho in (-0.9, -0.5, 0.0, 0.5, 0.9):
        prog = build_program(
            [VectorDecl("a", "c"), VectorDecl("b", "c"), CovDecl("a", "b", rho)]
        )
        st = build_limit(prog, n_samples=N, seed=abs(hash(rho)) % 2**32)
        for name_a, fa in cases.items():
            for name_b, fb in cases.items():
                test = E.mul(fa, E.substitute(fb, {0: E.x(1)}))
                mc, se = st.expect(test, ["a", "b"])
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    oracle = hermite_pair_expectation(fa, fb, rho, trunc=80)
                assert abs(mc - oracle) <= 3.0 * se + 2e-3, (name_a, name_b, rho)


def test_prefix_monotone_processing():
    prog = corpus.load_program("atav")
    st = LimitState(prog, n_samples=2000, seed=1)
    st.advance(prog.instructions[0])
    before = st.cols["y"].copy()
    st.advance(prog.instructions[1])
    assert np.array_equal(before, st.cols["y"])
