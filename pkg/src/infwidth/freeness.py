"""Empirical asymptotic-freeness experiments and the Jacobian spectrum pipeline.

Centered alternating word traces: for collections of matrices built from a
realization (a weight family {W, W^T}, or diagonal matrices of bounded
coordinatewise images of program vectors), the normalized trace of the
product of per-factor-centered polynomials vanishes as the size grows when
the collections are asymptotically free.  This module measures those traces
over size sweeps, constructs an equivalent scalar program whose final
moment has the same limit (so the limit engine can check it symbolically),
and runs the deep-net Jacobian singular-value pipeline: empirical moments
of J^T J against the free multiplicative convolution of the per-layer
square-derivative laws with Marchenko-Pastur factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exprs, laws
from .errors import NotAlternating, ShapeMismatch
from .finite import (
    DiagFactor,
    MatFactor,
    MatrixWord,
    Realization,
    dims_for_scale,
    instantiate,
    materialize,
    trace_moment,
    word_apply,
    word_classes,
)
from .numerics import gaussian_expect, stream
from .program import (
    MatMul,
    MatrixDecl,
    Moment,
    Nonlin,
    Program,
    VectorDecl,
    build_program,
)

FREENESS_EXACT_CAP = 512
FREENESS_PROBES = 32


# ---------------------------------------------------------------------------
# Collections and alternating words
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixCollection:
    """The pair {W, W^T} of one program matrix."""

    matrix: str


@dataclass(frozen=True)
class DiagCollection:
    """Diagonal matrices Diag(psi(x1, ..., xk)) for one bounded psi."""

    vectors: tuple[str, ...]
    expr: exprs.Expr

    def __post_init__(self):
        if not exprs.is_bounded(self.expr):
            raise ValueError("diagonal collections require a bounded expression")


CollectionSpec = MatrixCollection | DiagCollection


def _factor_collection(f: MatFactor | DiagFactor) -> CollectionSpec:
    if isinstance(f, MatFactor):
        return MatrixCollection(f.name)
    return DiagCollection(f.vectors, f.expr)


@dataclass(frozen=True)
class WordPoly:
    """Polynomial in one collection: a sum of weighted monomial words."""

    terms: tuple[tuple[float, MatrixWord], ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("empty polynomial")
        for _, word in self.terms:
            if not word.factors:
                raise ValueError("empty monomial in polynomial")

    def collection(self) -> CollectionSpec:
        colls = {_factor_collection(f) for _, w in self.terms for f in w.factors}
        if len(colls) != 1:
            raise NotAlternating("a polynomial mixes distinct collections")
        return colls.pop()

    def key(self) -> str:
        return " + ".join(f"{c!r}*({w.key()})" for c, w in self.terms)


def monomial(word: MatrixWord) -> WordPoly:
    return WordPoly(((1.0, word),))


@dataclass(frozen=True)
class AlternatingWord:
    """Factors (collection, polynomial) with no two adjacent collections equal.

    The first factor is applied first (it is the rightmost in the product).
    """

    factors: tuple[tuple[CollectionSpec, WordPoly], ...]

    def __post_init__(self):
        prev = None
        for coll, poly in self.factors:
            if poly.collection() != coll:
                raise ValueError(f"polynomial {poly.key()!r} is not over {coll!r}")
            if prev is not None and coll == prev:
                raise NotAlternating(f"adjacent factors share the collection {coll!r}")
            prev = coll

    def __len__(self) -> int:
        return len(self.factors)


def alternating_word(*polys: WordPoly) -> AlternatingWord:
    return AlternatingWord(tuple((p.collection(), p) for p in polys))


def word_from_groups(groups: list[list[list[MatFactor | DiagFactor]]]) -> AlternatingWord:
    """Build an alternating word from word-file groups of monomials."""
    polys = []
    for group in groups:
        polys.append(WordPoly(tuple((1.0, MatrixWord(tuple(m))) for m in group)))
    return alternating_word(*polys)


def cyclic_rotation(word: AlternatingWord, k: int) -> AlternatingWord:
    f = word.factors
    return AlternatingWord(f[k:] + f[:k])


# ---------------------------------------------------------------------------
# Centered traces
# ---------------------------------------------------------------------------


def _poly_side(program: Program, poly: WordPoly) -> str:
    side = None
    for _, w in poly.terms:
        rows, cols = word_classes(program, w)
        if rows != cols:
            raise ShapeMismatch(f"monomial {w.key()!r} is not square")
        side = side or rows
        if rows != side:
            raise ShapeMismatch("polynomial terms act on different classes")
    return side


def _poly_trace(realization, poly: WordPoly, method, cap, probes) -> float:
    return math.fsum(
        c * trace_moment(realization, w, method=method, cap=cap, probes=probes)[0]
        for c, w in poly.terms
    )


def _poly_apply(realization, poly: WordPoly, probe: np.ndarray) -> np.ndarray:
    out = None
    for c, w in poly.terms:
        term = c * word_apply(realization, w, probe)
        out = term if out is None else out + term
    return out


def _poly_materialize(realization, poly: WordPoly, cap: int) -> np.ndarray:
    out = None
    for c, w in poly.terms:
        term = c * materialize(realization, w, cap=cap)
        out = term if out is None else out + term
    return out


def centered_trace(
    realization: Realization,
    word: AlternatingWord,
    method: str = "auto",
    cap: int = FREENESS_EXACT_CAP,
    probes: int = FREENESS_PROBES,
) -> float:
    """Normalized trace of the product of centered polynomials.

    Each centering constant tau_i is the normalized trace of that polynomial
    on the same realization.  Exact below the dense cap, Gaussian-probe
    estimated above it.
    """
    prog = realization.program
    side_rep = None
    for _, poly in word.factors:
        side = _poly_side(prog, poly)
        side_rep = side_rep or side
        if side != side_rep:
            raise ShapeMismatch("alternating word factors act on different classes")
    if side_rep is None:
        return 1.0
    n = realization.dims[side_rep]
    if method == "auto":
        method = "exact" if n <= cap else "hutch"

    taus = [
        _poly_trace(realization, poly, method, cap, probes) for _, poly in word.factors
    ]
    if method == "exact":
        acc = np.eye(n)
        for (_, poly), tau in zip(word.factors, taus):
            m = _poly_materialize(realization, poly, cap)
            acc = (m - tau * np.eye(n)) @ acc
        return float(np.trace(acc)) / n
    g = stream(
        realization.seed, "ctrace", "|".join(p.key() for _, p in word.factors)
    )
    z = g.standard_normal((n, probes))
    v = z
    for (_, poly), tau in zip(word.factors, taus):
        v = _poly_apply(realization, poly, v) - tau * v
    return float(np.mean(np.einsum("ip,ip->p", z, v)) / n)


@dataclass(frozen=True)
class FreenessReport:
    """Per-size statistics of |centered trace| and a log-log decay slope."""

    rows: tuple[tuple[int, int, float, float, float], ...]  # n, count, median, mean, std
    slope: float


def freeness_sweep(
    program: Program,
    word: AlternatingWord,
    n_list: list[int],
    seeds: list[int],
    method: str = "auto",
    cap: int = FREENESS_EXACT_CAP,
    probes: int = FREENESS_PROBES,
) -> FreenessReport:
    if sorted(n_list) != list(n_list):
        raise ValueError("n_list must be ascending")
    rows = []
    medians = []
    for n in n_list:
        vals = []
        for seed in seeds:
            r = instantiate(program, dims_for_scale(program, n), seed)
            vals.append(abs(centered_trace(r, word, method=method, cap=cap, probes=probes)))
        vals_arr = np.array(vals)
        med = float(np.median(vals_arr))
        rows.append((n, len(seeds), med, float(vals_arr.mean()), float(vals_arr.std())))
        medians.append(med)
    slope = _loglog_slope(n_list, medians)
    return FreenessReport(tuple(rows), slope)


def _loglog_slope(ns, vals) -> float:
    xs = np.log(np.asarray(ns, dtype=np.float64))
    ys = np.log(np.maximum(np.asarray(vals, dtype=np.float64), 1e-300))
    if xs.size < 2:
        return 0.0
    return float(np.polyfit(xs, ys, 1)[0])


# ---------------------------------------------------------------------------
# Witness program: the same centered product as one scalar limit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FipWitness:
    program: Program
    final_scalar: str  # limit must be 0 for alternating words
    tau_scalars: tuple[str, ...]
    probe_vector: str
    stage_vectors: tuple[str, ...]


def fip_witness_program(base: Program, word: AlternatingWord) -> FipWitness:
    """Program computing (1/n) v^T prod_i (P_i - (1/n) u_i^T P_i u_i) v.

    Fresh standard-Gaussian probes v, u_1..u_t are appended to the base
    program; each factor contributes a matmul/diag chain applied to both the
    running vector and its own probe, a moment scalar for the centering
    constant, and the centered update.  The final moment scalar converges
    to 0 exactly when the word's collections are asymptotically free.
    """
    used = set(base.vector_names) | set(base.scalar_names)
    used |= {m.name for m in base.matrices}
    prefix = "fw_"
    while any(u.startswith(prefix) for u in used):
        prefix = "f" + prefix

    side_rep = None
    for _, poly in word.factors:
        side = _poly_side(base, poly)
        side_rep = side_rep or side
        if side != side_rep:
            raise ShapeMismatch("alternating word factors act on different classes")
    if side_rep is None:
        side_rep = base.cdc_reps()[0] if base.cdc_reps() else "c"

    decls: list = list(base.ratios) + list(base.matrices) + list(base.vectors)
    decls += list(base.covs) + list(base.ties) + list(base.scalars)
    decls += list(base.instructions)

    t = len(word.factors)
    v0 = f"{prefix}v"
    decls.append(VectorDecl(v0, side_rep))
    probes = []
    for i in range(1, t + 1):
        probes.append(f"{prefix}u{i}")
        decls.append(VectorDecl(probes[-1], side_rep))

    counter = 0

    def fresh(tag: str) -> str:
        nonlocal counter
        counter += 1
        return f"{prefix}{tag}{counter}"

    def apply_monomial(w: MatrixWord, start: str) -> str:
        cur = start
        for f in reversed(w.factors):
            out = fresh("g")
            if isinstance(f, MatFactor):
                decls.append(MatMul(out, f.name, f.transposed, cur))
            else:
                k = len(f.vectors)
                expr = exprs.mul(f.expr, exprs.x(k))
                decls.append(Nonlin(out, expr, f.vectors + (cur,)))
            cur = out
        return cur

    def apply_chain(poly: WordPoly, start: str) -> str:
        ends = [apply_monomial(w, start) for _, w in poly.terms]
        if len(ends) == 1 and poly.terms[0][0] == 1.0:
            return ends[0]
        combo = None
        for j, (c, _) in enumerate(poly.terms):
            term = exprs.mul(exprs.const(c), exprs.x(j))
            combo = term if combo is None else exprs.add(combo, term)
        out = fresh("g")
        decls.append(Nonlin(out, combo, tuple(ends)))
        return out

    taus = []
    stages = []
    prev = v0
    for i, (_, w) in enumerate(word.factors, start=1):
        applied = apply_chain(w, prev)
        probed = apply_chain(w, probes[i - 1])
        tau = fresh("tau")
        decls.append(
            Moment(tau, exprs.mul(exprs.x(0), exprs.x(1)), (probes[i - 1], probed))
        )
        taus.append(tau)
        nxt = fresh("v")
        decls.append(
            Nonlin(
                nxt,
                exprs.sub(exprs.x(0), exprs.mul(exprs.p(0), exprs.x(1))),
                (applied, prev),
                (tau,),
            )
        )
        stages.append(nxt)
        prev = nxt

    final = f"{prefix}out"
    decls.append(Moment(final, exprs.mul(exprs.x(0), exprs.x(1)), (v0, prev)))
    return FipWitness(build_program(decls), final, tuple(taus), v0, tuple(stages))


# ---------------------------------------------------------------------------
# Jacobian singular-value pipeline
# ---------------------------------------------------------------------------

# activation name -> (phi, weak derivative phi')
ACTIVATIONS: dict[str, tuple[exprs.Expr, exprs.Expr]] = {
    "identity": (exprs.x(0), exprs.const(1.0)),
    "relu": (exprs.relu(exprs.x(0)), exprs.step(exprs.x(0))),
    "tanh": (
        exprs.tanh(exprs.x(0)),
        exprs.sub(exprs.const(1.0), exprs.pow_(exprs.tanh(exprs.x(0)), 2)),
    ),
}


def mlp_forward_variances(phi: exprs.Expr, q1: float, layers: int, order: int = 200) -> list[float]:
    """Per-layer preactivation variances q_1..q_L of a wide feedforward stack."""
    if q1 <= 0:
        raise ValueError("q1 must be positive")
    qs = [float(q1)]
    for _ in range(layers - 1):
        qs.append(gaussian_expect(lambda z: exprs.evaluate(phi, (z,)) ** 2, var=qs[-1], order=order))
    return qs


def d_squared_moments(phi_prime: exprs.Expr, q: float, k_max: int, order: int = 200) -> np.ndarray:
    """Moments m_k = E phi'(sqrt(q) xi)^(2k) of the squared derivative law."""
    if q <= 0:
        raise ValueError("q must be positive")
    return np.array(
        [
            gaussian_expect(lambda z: exprs.evaluate(phi_prime, (z,)) ** (2 * k), var=q, order=order)
            for k in range(1, k_max + 1)
        ]
    )


def jacobian_limit_moments(
    layers: int,
    phi: exprs.Expr,
    phi_prime: exprs.Expr,
    q1: float,
    k_max: int,
    rho_list: list[float] | None = None,
) -> np.ndarray:
    """Limiting moments of J^T J: the free product of the per-layer
    squared-derivative laws and one Marchenko-Pastur factor per weight."""
    if layers < 2:
        raise ValueError("need at least two layers")
    if rho_list is None:
        rho_list = [1.0] * (layers - 1)
    if len(rho_list) != layers - 1:
        raise ValueError("rho_list must have layers - 1 entries")
    qs = mlp_forward_variances(phi, q1, layers - 1)
    out = laws.point_mass_moments(1.0, k_max)
    for q in qs:
        out = laws.free_mul_conv(out, d_squared_moments(phi_prime, q, k_max), k_max)
    for rho in rho_list:
        out = laws.free_mul_conv(out, laws.mp_moments(k_max, rho), k_max)
    return out


def mlp_program(layers: int, phi: exprs.Expr, q1: float) -> Program:
    """Forward stack h_{l+1} = W_{l+1} phi(h_l), first preactivation iid N(0, q1)."""
    decls: list = [VectorDecl("h1", "c1", 0.0, q1)]
    for l in range(2, layers + 1):
        decls.append(MatrixDecl(f"W{l}", f"c{l}", f"c{l-1}", 1.0))
    for l in range(1, layers):
        decls.append(Nonlin(f"x{l}", phi, (f"h{l}",)))
        decls.append(MatMul(f"h{l+1}", f"W{l+1}", False, f"x{l}"))
    return build_program(decls)


def jacobian_word(layers: int, phi_prime: exprs.Expr) -> MatrixWord:
    """J = W_L D_{L-1} W_{L-1} ... W_2 D_1 with D_l = Diag(phi'(h_l))."""
    factors: list[MatFactor | DiagFactor] = []
    for l in range(layers, 1, -1):
        factors.append(MatFactor(f"W{l}"))
        factors.append(DiagFactor((f"h{l-1}",), phi_prime))
    return MatrixWord(tuple(factors))


def jacobian_finite(
    layers: int,
    n: int,
    phi: exprs.Expr,
    phi_prime: exprs.Expr,
    q1: float,
    seed: int,
    k_max: int,
    cap: int = 1024,
    probes: int = FREENESS_PROBES,
) -> np.ndarray:
    """Empirical moments (1/n) tr (J^T J)^k of one finite realization."""
    prog = mlp_program(layers, phi, q1)
    r = instantiate(prog, {rep: n for rep in prog.cdc_reps()}, seed)
    word = jacobian_word(layers, phi_prime)
    if n <= cap:
        j = materialize(r, word, cap=cap)
        s2 = np.linalg.svd(j, compute_uv=False) ** 2
        return np.array([float(np.mean(s2**k)) for k in range(1, k_max + 1)])
    jtj = _word_transpose(word) * word
    g = stream(seed, "jacobian", word.key())
    z = g.standard_normal((n, probes))
    v = z
    out = []
    for _ in range(k_max):
        v = word_apply(r, jtj, v)
        out.append(float(np.mean(np.einsum("ip,ip->p", z, v)) / n))
    return np.array(out)


def _word_transpose(word: MatrixWord) -> MatrixWord:
    out = []
    for f in reversed(word.factors):
        if isinstance(f, MatFactor):
            out.append(MatFactor(f.name, not f.transposed))
        else:
            out.append(f)
    return MatrixWord(tuple(out))
