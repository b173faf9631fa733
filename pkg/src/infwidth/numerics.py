"""Numerical utilities: pseudoinverse, PSD repair, Hermite expansions, RNG streams."""

from __future__ import annotations

import hashlib
import math
import warnings

import numpy as np
from scipy import special

from . import exprs
from .errors import TruncationWarning


def pseudoinverse(m: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``rel_tol * max_singular_value`` are treated as
    exact zeros, so the result is stable on rank-deficient input.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return m.T.copy()
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    cutoff = rel_tol * (s[0] if s.size else 0.0)
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def repair_psd(sym: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    """Symmetrize and clip slightly negative eigenvalues to zero.

    Eigenvalues in ``[-rel_tol * scale, 0)`` are clipped (scale is the
    largest absolute eigenvalue); anything more negative raises ValueError
    because the matrix is not a numerically-perturbed covariance.
    """
    sym = np.asarray(sym, dtype=np.float64)
    if sym.size == 0:
        return sym.copy()
    sym = 0.5 * (sym + sym.T)
    w, v = np.linalg.eigh(sym)
    scale = float(np.max(np.abs(w))) if w.size else 0.0
    if scale == 0.0:
        return np.zeros_like(sym)
    if w[0] < -rel_tol * scale:
        raise ValueError(
            f"matrix is not PSD within tolerance: min eigenvalue {w[0]:.3e}, "
            f"scale {scale:.3e}"
        )
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.T


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """A matrix L with L @ L.T == cov (eigen factorization, PSD input)."""
    cov = repair_psd(cov, rel_tol=1e-9)
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def stream(seed: int, *labels) -> np.random.Generator:
    """Deterministic counter-based random stream keyed by (seed, labels).

    Streams for distinct keys are independent regardless of the order in
    which they are created or consumed, which keeps sampling reproducible
    under any execution schedule.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for lab in labels:
        h.update(b"\x1f")
        h.update(str(lab).encode())
    key = int.from_bytes(h.digest()[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature and Hermite expansions
# ---------------------------------------------------------------------------

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def gauss_hermite_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and probability weights for E over a standard normal.

    scipy's Golub-Welsch implementation stays stable at the high orders
    needed to integrate discontinuous functions accurately.
    """
    xs, ws = special.roots_hermitenorm(order)
    return xs, ws / _SQRT_2PI


def gaussian_expect(f, var: float = 1.0, order: int = 200) -> float:
    """E f(z) for z ~ N(0, var) by Gauss-Hermite quadrature."""
    xs, ws = gauss_hermite_nodes(order)
    vals = np.asarray(f(math.sqrt(var) * xs), dtype=np.float64)
    if vals.ndim == 0:
        return float(vals)  # constant integrand
    return float(np.dot(ws, vals))


def hermite_matrix(xs: np.ndarray, k_max: int) -> np.ndarray:
    """Orthonormal Hermite values H_k(xs) for k = 0..k_max, shape (k_max+1, len(xs)).

    Uses the normalized three-term recurrence, which is stable for large k.
    """
    out = np.empty((k_max + 1, xs.size))
    out[0] = 1.0
    if k_max >= 1:
        out[1] = xs
    for k in range(1, k_max):
        out[k + 1] = (xs * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def hermite_coefficients(phi: exprs.Expr, k_max: int, order: int | None = None) -> np.ndarray:
    """Coefficients of phi in the orthonormal Hermite basis under N(0,1)."""
    if order is None:
        order = max(4 * k_max, 8)
    xs, ws = gauss_hermite_nodes(order)
    vals = np.asarray(exprs.evaluate(phi, (xs,)), dtype=np.float64)
    if np.isscalar(vals) or vals.ndim == 0:
        vals = np.full_like(xs, float(vals))
    h = hermite_matrix(xs, k_max)
    return h @ (ws * vals)


def hermite_pair_expectation(
    phi: exprs.Expr, psi: exprs.Expr, rho: float, trunc: int
) -> float:
    """E phi(z1) psi(z2) for unit-variance jointly Gaussian (z1, z2), corr rho.

    Computed from the Hermite diagonalization sum_k a_k b_k rho^k truncated
    at k = trunc; emits TruncationWarning when the last kept term is not
    negligible.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    # the quadrature error on discontinuous factors decays like 1/order and
    # must sit well below Monte-Carlo error bars, so the oracle over-resolves
    order = max(4 * trunc, 6000)
    a = hermite_coefficients(phi, trunc, order)
    b = hermite_coefficients(psi, trunc, order)
    if abs(a[trunc] * b[trunc]) > 1e-8:
        warnings.warn(
            f"Hermite tail term |a_K b_K| = {abs(a[trunc] * b[trunc]):.2e} at K={trunc}",
            TruncationWarning,
            stacklevel=2,
        )
    powers = rho ** np.arange(trunc + 1)
    return float(np.dot(a * b, powers))
