"""Averaging operators on grid fields and the max-flattening recursion.

An averaging operator sends a field to the mean of its pushforwards
under finitely many measure-preserving cell maps.  Such operators never
increase the sup norm and preserve means, and when the maps come from a
certified covering family, one application provably shaves the maximum
of a zero-mean field: a definite fraction of the translates moves every
cell into the sublevel set where the field is below half its maximum.
Iterating against a covering oracle therefore drives the maximum (and,
run two-sided, the whole sup norm) below any positive target.  The
recursion keeps an auditable trace of maxima so the per-step
contraction can be re-checked by callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CoveringBoundError, FlattenBudgetError, InvalidFieldError
from .phase import (
    CellPermutation,
    ScalarField,
    TorusGrid,
    TorusTranslation,
    require_zero_mean,
    scale_field,
    sup_norm,
)

_MAP_TYPES = (CellPermutation, TorusTranslation)

FLATTEN_TARGET = 1e-2
FLATTEN_MAX_ITER = 10**5


def _push_samples(g, samples):
    """Raw pushforward (H o g^{-1}) of a sample array on Y."""
    if isinstance(g, TorusTranslation):
        return np.roll(samples, g.shift, axis=(-2, -1))
    flat = samples.reshape(samples.shape[:-2] + (-1,))[..., g.inverse_perm]
    return flat.reshape(samples.shape)


@dataclass(frozen=True, eq=False)
class AveragingOperator:
    """Uniform average over a weighted family of measure-preserving cell maps.

    Acts on fields over Y by (1/N) sum_i w_i (H o g_i^{-1}) with
    N = sum_i w_i.  Weights stand for repeated maps, so padded families
    (identity copies, least-common-multiple padding) stay O(#distinct)
    in storage while N counts every copy.
    """

    grid: TorusGrid
    maps: tuple
    weights: tuple = None

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise InvalidFieldError("averaging needs at least one map")
        for g in maps:
            if not isinstance(g, _MAP_TYPES):
                raise InvalidFieldError("maps must be exact cell maps")
            if g.grid != self.grid:
                raise InvalidFieldError("map grid mismatch")
        if self.weights is None:
            weights = (1,) * len(maps)
        else:
            weights = tuple(int(w) for w in self.weights)
        if len(weights) != len(maps) or any(w <= 0 for w in weights):
            raise InvalidFieldError("weights must be positive, one per map")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "weights", weights)

    @property
    def n_maps(self):
        """Family size N counted with multiplicity (the averaging denominator)."""
        return sum(self.weights)

    def apply(self, f: ScalarField) -> ScalarField:
        if f.domain != "Y":
            raise InvalidFieldError("averaging acts on fields over Y")
        if f.grid != self.grid:
            raise InvalidFieldError("field grid mismatch")
        acc = np.zeros_like(f.samples)
        for g, w in zip(self.maps, self.weights):
            acc += w * _push_samples(g, f.samples)
        return f.with_samples(acc / self.n_maps)


def identity_operator(grid: TorusGrid) -> AveragingOperator:
    return AveragingOperator(grid, (TorusTranslation(grid, (0, 0)),))


def apply_averaging(op: AveragingOperator, f: ScalarField) -> ScalarField:
    """Mean of the pushforwards of a zero-mean field under the family."""
    require_zero_mean(f, tol=1e-10)
    return op.apply(f)


def _compose_maps(g2, g1):
    """g2 after g1, staying in closed form for translation pairs."""
    if isinstance(g2, TorusTranslation) and isinstance(g1, TorusTranslation):
        return g2.compose(g1)
    if isinstance(g2, TorusTranslation):
        g2 = g2.to_permutation()
    if isinstance(g1, TorusTranslation):
        g1 = g1.to_permutation()
    return g2.compose(g1)


def compose_averaging(s2: AveragingOperator, s1: AveragingOperator) -> AveragingOperator:
    """Explicit product family acting exactly as s2 after s1.

    The composed family is {g2 o g1} with multiplicities multiplied, so
    its size is exactly N2*N1.  Only suitable for short compositions;
    long recursions should stay factored in an OperatorChain.
    """
    if s2.grid != s1.grid:
        raise InvalidFieldError("operator grids differ")
    maps = []
    weights = []
    for g2, w2 in zip(s2.maps, s2.weights):
        for g1, w1 in zip(s1.maps, s1.weights):
            maps.append(_compose_maps(g2, g1))
            weights.append(w2 * w1)
    return AveragingOperator(s2.grid, tuple(maps), tuple(weights))


@dataclass(frozen=True, eq=False)
class OperatorChain:
    """Composition of averaging operators kept in factored form.

    Materializing the product family of a long recursion would need
    prod(N_i) maps, so the chain stores the factors and applies them in
    order (operators[0] first).
    """

    operators: tuple

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))

    @property
    def n_maps(self):
        n = 1
        for op in self.operators:
            n *= op.n_maps
        return n

    def apply(self, f: ScalarField) -> ScalarField:
        for op in self.operators:
            f = op.apply(f)
        return f

    def then(self, other: "OperatorChain") -> "OperatorChain":
        """Chain running self first, then other."""
        return OperatorChain(self.operators + other.operators)


@dataclass(frozen=True, eq=False)
class CoveringResponse:
    """A covering oracle's answer for one sublevel set.

    ``operator`` averages over the returned family g_1..g_N; (c1, c2)
    certify the covering inequality: every cell lies in at least
    N / (c1 + c2 * mu(Y)/mu(A)) of the translates g_i(A).
    """

    operator: AveragingOperator
    c1: float
    c2: float

    def __post_init__(self):
        if self.c1 < 0 or self.c2 <= 0:
            raise InvalidFieldError("covering constants need c1 >= 0, c2 > 0")


def contraction_constant(c1, c2) -> float:
    """One-step constant c: a certified response shaves max H by m/c of itself."""
    return 2.0 * (3.0 * float(c2) + float(c1))


def sublevel_mask(samples: np.ndarray) -> np.ndarray:
    """Cells strictly below half the maximum; ties go to the complement."""
    samples = np.asarray(samples, dtype=float)
    return samples < 0.5 * float(samples.max())


def visit_counts(op: AveragingOperator, mask: np.ndarray) -> np.ndarray:
    """nu(y): multiplicity-weighted count of translates g_i(A) containing y."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != op.grid.res_y:
        raise InvalidFieldError("mask shape does not match the grid")
    indicator = mask.astype(np.int64)
    counts = np.zeros(mask.shape, dtype=np.int64)
    for g, w in zip(op.maps, op.weights):
        counts += w * _push_samples(g, indicator)
    return counts


@dataclass(frozen=True)
class SublevelBoundsReport:
    """Measured ratios and their certified lower bounds for one step."""

    max_value: float
    cell_count: int
    mass_ratio: float
    mass_bound: float
    visit_ratio: float
    visit_bound: float
    skipped: bool = False


def sublevel_bounds_check(f: ScalarField, response: CoveringResponse) -> SublevelBoundsReport:
    """Audit one recursion step against its two certified lower bounds.

    For zero-mean H with ||H|| <= 1 and m = max H > 0, the sublevel set
    A = {H < m/2} carries mass mu(A) >= m/(m+2), and a family with
    constants (c1, c2) visits every cell at least N*m/(3*c2+c1) times.
    A violation points at a covering-oracle bug or an out-of-contract
    input, and is raised rather than reported.
    """
    m = float(f.samples.max())
    if m <= 0.0:
        return SublevelBoundsReport(m, 0, 0.0, 0.0, 0.0, 0.0, skipped=True)
    mask = sublevel_mask(f.samples)
    count = int(mask.sum())
    mass_ratio = count / mask.size
    mass_bound = m / (m + 2.0)
    if mass_ratio < mass_bound - 1e-12:
        raise CoveringBoundError(
            f"sublevel mass {mass_ratio:.6f} below m/(m+2) = {mass_bound:.6f}"
        )
    counts = visit_counts(response.operator, mask)
    visit_ratio = float(counts.min()) / response.operator.n_maps
    visit_bound = m / (3.0 * response.c2 + response.c1)
    if visit_ratio < visit_bound - 1e-12:
        raise CoveringBoundError(
            f"visit ratio {visit_ratio:.6f} below m/(3*c2+c1) = {visit_bound:.6f}"
        )
    return SublevelBoundsReport(m, count, mass_ratio, mass_bound, visit_ratio, visit_bound)


@dataclass(frozen=True)
class FlattenTrace:
    """Audit record of the flattening recursion.

    m[i] is the maximum before step i (one more entry than operators);
    constants[i] is the oracle's (c1, c2) for step i; c is the largest
    per-step contraction constant, infinite when no step was needed.
    Construction re-validates the whole contraction ladder, so a trace
    that exists is a trace that checks out.
    """

    m: tuple
    operators: tuple
    constants: tuple
    c: float

    def __post_init__(self):
        m = tuple(float(v) for v in self.m)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "operators", tuple(self.operators))
        object.__setattr__(self, "constants", tuple(self.constants))
        if len(m) != len(self.operators) + 1:
            raise InvalidFieldError("trace needs one more max than operators")
        if len(self.constants) != len(self.operators):
            raise InvalidFieldError("trace needs one constant pair per operator")
        if not self.c > 0:
            raise InvalidFieldError("contraction constant must be positive")
        for i in range(len(m) - 1):
            bound = m[i] * (1.0 - m[i] / self.c) + 1e-10
            if m[i + 1] > bound:
                raise CoveringBoundError(
                    f"step {i} missed the contraction bound: "
                    f"{m[i + 1]:.6e} > {bound:.6e}"
                )


def flatten_max(
    f: ScalarField,
    covering_oracle,
    target: float = FLATTEN_TARGET,
    max_iter: int = FLATTEN_MAX_ITER,
    check_bounds: bool = False,
):
    """Drive max H below target by averaging against covering families.

    Each step hands the oracle the boolean mask of A = {H < max/2} and
    expects a CoveringResponse whose constants certify the one-step
    contraction max' <= max*(1 - max/c) with c = 2*(3*c2 + c1).  The
    certified bound is re-checked against the measured maxima; a miss is
    raised as a covering bug instead of being looped past.  With
    check_bounds=True the sublevel mass and visit-count bounds are also
    audited before every application.

    Returns the composed operator in factored form and the trace.
    """
    require_zero_mean(f)
    if sup_norm(f) > 1.0 + 1e-12:
        raise InvalidFieldError("flattening expects sup norm <= 1")
    if not target > 0:
        raise InvalidFieldError("target must be positive")
    cur = f
    ms = [float(cur.samples.max())]
    ops = []
    consts = []
    worst_c = math.inf
    steps = 0
    while ms[-1] >= target:
        if steps >= max_iter:
            partial = FlattenTrace(tuple(ms), tuple(ops), tuple(consts), worst_c)
            raise FlattenBudgetError(
                f"flatten budget of {max_iter} steps exhausted at max {ms[-1]:.6e}",
                trace=partial,
            )
        response = covering_oracle(sublevel_mask(cur.samples))
        if check_bounds:
            sublevel_bounds_check(cur, response)
        step_c = contraction_constant(response.c1, response.c2)
        nxt = response.operator.apply(cur)
        m_next = float(nxt.samples.max())
        bound = ms[-1] * (1.0 - ms[-1] / step_c) + 1e-10
        if m_next > bound:
            raise CoveringBoundError(
                f"averaging step missed the contraction bound: "
                f"{m_next:.6e} > {bound:.6e}"
            )
        ops.append(response.operator)
        consts.append((response.c1, response.c2))
        worst_c = step_c if math.isinf(worst_c) else max(worst_c, step_c)
        ms.append(m_next)
        cur = nxt
        steps += 1
    trace = FlattenTrace(tuple(ms), tuple(ops), tuple(consts), worst_c)
    return OperatorChain(tuple(ops)), trace


def flatten_sup_traced(
    f: ScalarField,
    covering_oracle,
    eps: float,
    max_iter: int = FLATTEN_MAX_ITER,
    check_bounds: bool = False,
):
    """Two-sided flattening with both per-side traces returned."""
    plus_chain, plus_trace = flatten_max(f, covering_oracle, eps, max_iter, check_bounds)
    mid = plus_chain.apply(f)
    minus_chain, minus_trace = flatten_max(
        scale_field(mid, -1.0), covering_oracle, eps, max_iter, check_bounds
    )
    return plus_chain.then(minus_chain), plus_trace, minus_trace


def flatten_sup(
    f: ScalarField,
    covering_oracle,
    eps: float,
    max_iter: int = FLATTEN_MAX_ITER,
) -> OperatorChain:
    """Make the whole sup norm (not just the max) smaller than eps.

    First flatten the maxima of H, then the maxima of -S(H); averaging
    never raises maxima, so the second pass cannot undo the first and
    the composition satisfies ||S(H)|| < eps.
    """
    chain, _, _ = flatten_sup_traced(f, covering_oracle, eps, max_iter)
    return chain
