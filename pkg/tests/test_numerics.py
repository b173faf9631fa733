import math
import warnings

import numpy as np
import pytest

from infwidth import exprs as E
from infwidth.errors import TruncationWarning
from infwidth.numerics import (
    gauss_hermite_nodes,
    gaussian_expect,
    hermite_coefficients,
    hermite_matrix,
    hermite_pair_expectation,
    pseudoinverse,
    repair_psd,
    stream,
)


def penrose_holds(a: np.ndarray, ap: np.ndarray, tol: float) -> bool:
    """Brute-force check of all four defining conditions."""
    scale = max(1.0, float(np.abs(a).max()))
    checks = [
        a @ ap @ a - a,
        ap @ a @ ap - ap,
        (a @ ap).T - a @ ap,
        (ap @ a).T - ap @ a,
    ]
    return all(float(np.abs(c).max()) <= tol * scale for c in checks)


def test_pinv_invertible_diagonal():
    got = pseudoinverse(np.diag([2.0, 4.0]))
    assert np.allclose(got, np.diag([0.5, 0.25]), atol=1e-14)


def test_pinv_zero_matrix():
    assert np.array_equal(pseudoinverse(np.zeros((3, 2))), np.zeros((2, 3)))


def test_pinv_rank_one():
    got = pseudoinverse(np.ones((2, 2)))
    assert np.allclose(got, np.full((2, 2), 0.25), atol=1e-14)
    assert penrose_holds(np.ones((2, 2)), got, 1e-12)


def test_pinv_random_rank_deficient_penrose():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n, m = rng.integers(2, 13, size=2)
        r = int(rng.integers(1, min(n, m) + 1))
        a = (rng.standard_normal((n, r)) @ rng.standard_normal((r, m)))
        ap = pseudoinverse(a)
        assert penrose_holds(a, ap, 1e-10)


def test_repair_psd_clips_tiny_negatives():
    m = np.array([[1.0, 1.0], [1.0, 1.0 - 1e-12]])
    fixed = repair_psd(m, rel_tol=1e-9)
    assert np.linalg.eigvalsh(fixed)[0] >= -1e-15


def test_repair_psd_rejects_indefinite():
    with pytest.raises(ValueError):
        repair_psd(np.array([[1.0, 2.0], [2.0, 1.0]]), rel_tol=1e-9)


def test_stream_determinism_and_independence():
    a1 = stream(7, "matrix", "W").standard_normal(5)
    a2 = stream(7, "matrix", "W").standard_normal(5)
    b = stream(7, "matrix", "V").standard_normal(5)
    c = stream(8, "matrix", "W").standard_normal(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_gauss_hermite_basics():
    xs, ws = gauss_hermite_nodes(64)
    assert ws.sum() == pytest.approx(1.0, abs=1e-12)
    assert float(ws @ xs**2) == pytest.approx(1.0, abs=1e-12)
    assert gaussian_expect(lambda z: z**4, var=2.0) == pytest.approx(12.0, rel=1e-10)


def test_hermite_matrix_orthonormal():
    xs, ws = gauss_hermite_nodes(200)
    h = hermite_matrix(xs, 12)
    gram = (h * ws) @ h.T
    assert np.allclose(gram, np.eye(13), atol=1e-8)


def test_hermite_coefficients_of_square():
    # x^2 = H_0 + sqrt(2) H_2 in the orthonormal basis
    a = hermite_coefficients(E.pow_(E.x(0), 2), 4)
    assert a[0] == pytest.approx(1.0, abs=1e-10)
    assert a[2] == pytest.approx(math.sqrt(2.0), abs=1e-10)
    assert abs(a[1]) < 1e-10 and abs(a[3]) < 1e-10


def test_pair_expectation_identity():
    val = hermite_pair_expectation(E.x(0), E.x(0), 0.3, trunc=6)
    assert val == pytest.approx(0.3, abs=1e-10)


def test_pair_expectation_independent_centered():
    # rho = 0 with a mean-zero factor kills every term
    val = hermite_pair_expectation(E.x(0), E.tanh(E.x(0)), 0.0, trunc=8)
    assert val == pytest.approx(0.0, abs=1e-12)


def test_pair_expectation_squares():
    # E z1^2 z2^2 = 1 + 2 rho^2
    for rho in (-0.9, -0.5, 0.0, 0.5, 0.9):
        val = hermite_pair_expectation(E.pow_(E.x(0), 2), E.pow_(E.x(0), 2), rho, 8)
        assert val == pytest.approx(1.0 + 2.0 * rho * rho, abs=1e-9)


def test_pair_expectation_step_closed_form():
    # E step(z1) step(z2) = 1/4 + arcsin(rho) / (2 pi)
    sstep = E.step(E.x(0))
    for rho in (-0.5, 0.25, 0.5):
        want = 0.25 + math.asin(rho) / (2.0 * math.pi)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationWarning)
            got = hermite_pair_expectation(sstep, sstep, rho, trunc=80)
        # coefficient quadrature on a discontinuous function is the limiting
        # error here, well inside the 3-stderr band the engine compares at
        assert got == pytest.approx(want, abs=1e-3)


def test_truncation_warning_fires():
    with pytest.warns(TruncationWarning):
        hermite_pair_expectation(E.step(E.x(0)), E.step(E.x(0)), 0.9, trunc=3)
