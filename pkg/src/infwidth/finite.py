"""Finite-size sampling and execution of programs, plus matrix-word statistics.

A Realization is one concrete sample of a program: every declared matrix and
initial vector drawn at the assigned dimensions from its own deterministic
stream, then all instructions executed in order.  On top of realizations this
module evaluates coordinate averages, applies matrix words (products of
program matrices and diagonal matrices of bounded coordinatewise images)
without materializing them, and estimates normalized traces either exactly
or with the Gaussian probe identity tr M = E z^T M z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import warnings

import numpy as np

from . import exprs
from .errors import (
    ArityMismatch,
    CapExceeded,
    DimClassConflict,
    MemoryPolicyError,
    ShapeMismatch,
    UndeclaredSymbol,
)
from .numerics import gaussian_factor, stream
from .program import MatMul, Moment, Nonlin, Program

EXACT_CAP = 1024  # largest side for dense materialization / eigendecomposition
ELEMENT_CAP = 1 << 26  # largest dense allocation (entries) per object
HUTCHINSON_PROBES = 32


def dims_for_scale(program: Program, n: int) -> dict[str, int]:
    """Dimension per CDC at base scale n, honouring declared limiting ratios."""
    return {rep: max(1, round(program.ratio_of_cdc(rep) * n)) for rep in program.cdc_reps()}


def resolve_dims(program: Program, dims: dict[str, int]) -> dict[str, int]:
    """Normalize a class->size map onto CDC representatives and validate it."""
    out: dict[str, int] = {}
    for cls, n in dims.items():
        if cls not in program.cdc_of_class:
            raise UndeclaredSymbol(f"dimension given for unknown class {cls!r}")
        if n < 1:
            raise ValueError("all dimensions must be >= 1")
        rep = program.cdc_of_class[cls]
        if rep in out and out[rep] != n:
            raise DimClassConflict(
                f"classes merged into {rep!r} assigned conflicting sizes"
            )
        out[rep] = int(n)
    missing = [rep for rep in program.cdc_reps() if rep not in out]
    if missing:
        raise DimClassConflict(f"no dimension assigned for classes {missing}")
    reps = program.cdc_reps()
    if reps:
        base = min(out[r] / program.ratio_of_cdc(r) for r in reps)
        for r in reps:
            target = program.ratio_of_cdc(r) * base
            if target > 0 and abs(out[r] - target) > 0.01 * target + 1.0:
                warnings.warn(
                    f"dimension {out[r]} of class {r!r} is more than 1% away from "
                    f"the declared limiting ratio (expected ~{target:.0f})",
                    stacklevel=2,
                )
    return out


@dataclass(frozen=True)
class Realization:
    """One finite-size sample of a program; immutable and thread-shareable."""

    program: Program
    seed: int
    dims: dict[str, int]  # CDC representative -> size
    matrices: dict[str, np.ndarray] = field(repr=False)
    vectors: dict[str, np.ndarray] = field(repr=False)
    scalars: dict[str, float]

    def dim_of(self, vector: str) -> int:
        return self.dims[self.program.cdc(vector)]


def instantiate(
    program: Program,
    dims: dict[str, int],
    seed: int,
    element_cap: int = ELEMENT_CAP,
) -> Realization:
    """Sample and execute a program; a pure function of (program, dims, seed)."""
    dims = resolve_dims(program, dims)

    matrices: dict[str, np.ndarray] = {}
    for m in program.matrices:
        r = dims[program.cdc_of_class[m.rows]]
        c = dims[program.cdc_of_class[m.cols]]
        if r * c > element_cap:
            raise MemoryPolicyError(
                f"matrix {m.name!r} would need {r}x{c} entries (cap {element_cap})"
            )
        g = stream(seed, "matrix", m.name)
        matrices[m.name] = g.standard_normal((r, c)) * math.sqrt(m.sigma2 / c)

    vectors: dict[str, np.ndarray] = {}
    for rep in program.cdc_reps():
        names, mean, cov = program.init_block(rep)
        if not names:
            continue
        n = dims[rep]
        lchol = gaussian_factor(cov)
        gauss = np.column_stack(
            [stream(seed, "vector", nm).standard_normal(n) for nm in names]
        )
        block = mean[None, :] + gauss @ lchol.T
        for j, nm in enumerate(names):
            vectors[nm] = np.ascontiguousarray(block[:, j])

    scalars: dict[str, float] = {}
    n_ref = _scalar_reference_dim(program, dims)
    for s in program.scalars:
        scalars[s.name] = s.limit if s.rule is None else s.rule.value(n_ref)

    for ins in program.instructions:
        if isinstance(ins, MatMul):
            w = matrices[ins.matrix]
            v = vectors[ins.vin]
            vectors[ins.out] = (w.T if ins.transposed else w) @ v
        elif isinstance(ins, Nonlin):
            cols = tuple(vectors[nm] for nm in ins.inputs)
            pars = tuple(scalars[nm] for nm in ins.params)
            vectors[ins.out] = np.asarray(
                exprs.evaluate(ins.expr, cols, pars), dtype=np.float64
            )
        elif isinstance(ins, Moment):
            cols = tuple(vectors[nm] for nm in ins.inputs)
            pars = tuple(scalars[nm] for nm in ins.params)
            scalars[ins.out] = float(np.mean(exprs.evaluate(ins.expr, cols, pars)))

    return Realization(program, seed, dims, matrices, vectors, scalars)


def _scalar_reference_dim(program: Program, dims: dict[str, int]) -> int:
    # size entering scalar sequence rules f(1/n): the first declared initial
    # vector's class, since initial scalars are declared alongside it
    if program.vectors:
        return dims[program.cdc(program.vectors[0].name)]
    return max(dims.values(), default=1)


def empirical_average(realization: Realization, test: exprs.Expr, vectors: list[str]) -> float:
    """Exact coordinate average (1/n) sum_a test(v1_a, ..., vk_a)."""
    prog = realization.program
    reps = {prog.cdc(nm) for nm in vectors}
    if len(reps) > 1:
        raise DimClassConflict(f"test vectors span several classes: {sorted(reps)}")
    if exprs.n_inputs(test) > len(vectors):
        raise ArityMismatch("test expression arity exceeds vector count")
    cols = tuple(realization.vectors[nm] for nm in vectors)
    return float(np.mean(exprs.evaluate(test, cols)))


# ---------------------------------------------------------------------------
# Matrix words
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatFactor:
    name: str
    transposed: bool = False

    def key(self) -> str:
        return f"mat {self.name}^T" if self.transposed else f"mat {self.name}"


@dataclass(frozen=True)
class DiagFactor:
    vectors: tuple[str, ...]
    expr: exprs.Expr

    def __post_init__(self):
        if not exprs.is_bounded(self.expr):
            raise ValueError("diagonal factors require a bounded expression")
        if exprs.n_inputs(self.expr) > len(self.vectors):
            raise ArityMismatch("diagonal expression arity exceeds vector count")

    def key(self) -> str:
        return f"diag {','.join(self.vectors)} {exprs.format_expr(self.expr)}"


WordFactor = MatFactor | DiagFactor


@dataclass(frozen=True)
class MatrixWord:
    """Product of factors, leftmost first; applied right-to-left."""

    factors: tuple[WordFactor, ...]

    def key(self) -> str:
        return " | ".join(f.key() for f in self.factors)

    def __mul__(self, other: "MatrixWord") -> "MatrixWord":
        return MatrixWord(self.factors + other.factors)

    def power(self, k: int) -> "MatrixWord":
        return MatrixWord(self.factors * k)


def word_classes(program: Program, word: MatrixWord) -> tuple[str, str]:
    """(rows, cols) CDC representatives of the product; empty word is identity."""
    rows = cols = ""
    for f in word.factors:
        if isinstance(f, MatFactor):
            m = program.matrix(f.name)
            fr = program.cdc_of_class[m.cols if f.transposed else m.rows]
            fc = program.cdc_of_class[m.rows if f.transposed else m.cols]
        else:
            reps = {program.cdc(v) for v in f.vectors}
            if len(reps) != 1:
                raise DimClassConflict("diagonal factor vectors span several classes")
            fr = fc = reps.pop()
        if cols and cols != fr:
            raise ShapeMismatch(
                f"factor {f.key()!r} does not compose: expects rows {cols!r}, has {fr!r}"
            )
        if not rows:
            rows = fr
        cols = fc
    return rows, cols


def _apply_factor(realization: Realization, f: WordFactor, probe: np.ndarray) -> np.ndarray:
    if isinstance(f, MatFactor):
        w = realization.matrices[f.name]
        return (w.T if f.transposed else w) @ probe
    cols = tuple(realization.vectors[v] for v in f.vectors)
    d = np.asarray(exprs.evaluate(f.expr, cols), dtype=np.float64)
    if d.ndim == 0:
        d = np.full(probe.shape[0], float(d))
    return d[:, None] * probe if probe.ndim == 2 else d * probe


def word_apply(realization: Realization, word: MatrixWord, probe: np.ndarray) -> np.ndarray:
    """word @ probe computed factor-by-factor, never forming the product."""
    rows, cols = word_classes(realization.program, word)
    probe = np.asarray(probe, dtype=np.float64)
    if cols and probe.shape[0] != realization.dims[cols]:
        raise ShapeMismatch(
            f"probe has {probe.shape[0]} rows; word expects {realization.dims[cols]}"
        )
    out = probe
    for f in reversed(word.factors):
        out = _apply_factor(realization, f, out)
    return out


def materialize(realization: Realization, word: MatrixWord, cap: int = EXACT_CAP) -> np.ndarray:
    rows, cols = word_classes(realization.program, word)
    if not rows:  # empty product: identity on an unknown class is not materializable
        raise ShapeMismatch("cannot materialize the empty word")
    n_rows, n_cols = realization.dims[rows], realization.dims[cols]
    if max(n_rows, n_cols) > cap:
        raise CapExceeded(f"side {max(n_rows, n_cols)} exceeds dense cap {cap}")
    return word_apply(realization, word, np.eye(n_cols))


def _square_side(realization: Realization, word: MatrixWord) -> int:
    rows, cols = word_classes(realization.program, word)
    if not rows:
        return 0  # empty word: identity
    if rows != cols:
        raise ShapeMismatch(f"word is not square: rows {rows!r}, cols {cols!r}")
    return realization.dims[rows]


def trace_moment(
    realization: Realization,
    word: MatrixWord,
    method: str | tuple[str, int] = "auto",
    cap: int = EXACT_CAP,
    probes: int = HUTCHINSON_PROBES,
) -> tuple[float, float]:
    """Normalized trace (1/n) tr(word) with a standard error.

    method: "exact" (dense, requires n <= cap), ("hutch", p) for p Gaussian
    probes, or "auto" to pick exact when the side fits under the cap.
    """
    n = _square_side(realization, word)
    if n == 0:
        return 1.0, 0.0
    if isinstance(method, tuple):
        method, probes = method
    if method == "auto":
        method = "exact" if n <= cap else "hutch"
    if method == "exact":
        m = materialize(realization, word, cap=cap)
        return float(np.trace(m)) / n, 0.0
    if method != "hutch":
        raise ValueError(f"unknown trace method {method!r}")
    g = stream(realization.seed, "hutch", word.key())
    z = g.standard_normal((n, probes))
    est = np.einsum("ip,ip->p", z, word_apply(realization, word, z)) / n
    return float(np.mean(est)), float(np.std(est, ddof=1) / math.sqrt(probes))


def spectral_moments(
    realization: Realization,
    word: MatrixWord,
    k_max: int,
    method: str | tuple[str, int] = "auto",
    cap: int = EXACT_CAP,
    probes: int = HUTCHINSON_PROBES,
) -> list[tuple[float, float]]:
    """[(1/n) tr(word^r) for r = 1..k_max]; word must be square (and should
    be symmetric when interpreted as spectral moments)."""
    n = _square_side(realization, word)
    if n == 0:
        return [(1.0, 0.0)] * k_max
    if isinstance(method, tuple):
        method, probes = method
    if method == "auto":
        method = "exact" if n <= cap else "hutch"
    out: list[tuple[float, float]] = []
    if method == "exact":
        m = materialize(realization, word, cap=cap)
        acc = m
        for _ in range(k_max):
            out.append((float(np.trace(acc)) / n, 0.0))
            acc = acc @ m
        return out
    if method != "hutch":
        raise ValueError(f"unknown trace method {method!r}")
    g = stream(realization.seed, "hutch", word.key())
    z = g.standard_normal((n, probes))
    v = z
    for _ in range(k_max):
        v = word_apply(realization, word, v)
        est = np.einsum("ip,ip->p", z, v) / n
        out.append((float(np.mean(est)), float(np.std(est, ddof=1) / math.sqrt(probes))))
    return out


def eig_spectrum(
    realization: Realization, word: MatrixWord, cap: int = EXACT_CAP
) -> np.ndarray:
    """Ascending eigenvalues of the materialized symmetric word."""
    n = _square_side(realization, word)
    if n == 0:
        raise ShapeMismatch("cannot take the spectrum of the empty word")
    if n > cap:
        raise CapExceeded(f"side {n} exceeds dense cap {cap}")
    m = materialize(realization, word, cap=cap)
    return np.linalg.eigvalsh(0.5 * (m + m.T))
