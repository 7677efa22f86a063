"""Skew products over circle rotations and their Birkhoff diagnostics.

A system is T(t, y) = (t + alpha, h_t(y)) with h a loop of
measure-preserving torus maps.  Strict ergodicity of the flagship
examples means Birkhoff averages converge uniformly over *all* starting
points, which is what the deviation statistics below sample.

Loops backed by translation families evaluate exactly; when both the
observable and the system carry closed forms the deviation statistic is
computed from the accumulated trigonometric polynomial, including its
exact continuum sup.  Everything else runs on sampled grids and is
documented as a one-sided witness: a reported sup over grid starting
points never exceeds the true one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidFieldError, OrbitCapError, UnderdeterminedSequenceError
from .phase import ScalarField, TorusGrid, TrigPoly, wrap01

ORBIT_CAP = 10 ** 6


# ---------------------------------------------------------------------------
# Loops


class HamiltonianLoop:
    """Base class: a 1-periodic family of measure-preserving torus maps.

    `homotopy_tag` is bookkeeping only; no homotopy computations happen
    at grid scale.  `generator` (when present) is the normalized
    Hamiltonian producing the loop, owned by the hofer module.
    """

    homotopy_tag: str = "unspecified"
    period_divisor: Fraction | None = None
    generator = None

    def map_at(self, t):
        raise NotImplementedError

    def translate_points(self, t, pts_y):
        """Apply h_t to points, with t an array aligned to pts_y[...,0]."""
        raise NotImplementedError


class TranslationLoop(HamiltonianLoop):
    """Loop of torus translations y -> y + u(t)."""

    def __init__(self, u, homotopy_tag="translation-family", period_divisor=None):
        self.u = u
        self.homotopy_tag = homotopy_tag
        self.period_divisor = period_divisor

    def vector_at(self, t):
        return self.u(np.asarray(t, dtype=float))

    def map_at(self, t):
        vec = np.asarray(self.u(np.asarray(float(t)))).reshape(2)

        class _Translate:
            def apply_points(self, pts, _v=vec):
                return wrap01(np.asarray(pts, dtype=float) + _v)

            def apply_inverse_points(self, pts, _v=vec):
                return wrap01(np.asarray(pts, dtype=float) - _v)

        return _Translate()

    def translate_points(self, t, pts_y):
        vec = self.u(np.asarray(t, dtype=float))
        return wrap01(pts_y + vec)


class LinearTranslationLoop(TranslationLoop):
    """u(t) = base + rate * t with integer rate, so the loop closes mod 1."""

    def __init__(self, rate, base, homotopy_tag="translation-family"):
        self.rate = np.asarray(rate, dtype=float).reshape(2)
        self.base = np.asarray(base, dtype=float).reshape(2)
        if not np.allclose(self.rate, np.rint(self.rate)):
            raise InvalidFieldError("translation rate must be integer for a loop")
        super().__init__(self._u, homotopy_tag=homotopy_tag, period_divisor=Fraction(1))

    def _u(self, t):
        t = np.asarray(t, dtype=float)
        return self.base + np.multiply.outer(t, self.rate)

    def vector_pieces(self, t_lo, t_hi):
        lo = self.base + self.rate * t_lo
        hi = self.base + self.rate * t_hi
        return [(t_lo, t_hi, np.minimum(lo, hi), np.maximum(lo, hi))]


class PiecewiseTranslationLoop(TranslationLoop):
    """Translation table over uniform t slots; exact, discontinuous in t."""

    def __init__(self, table, homotopy_tag="translation-family", period_divisor=None):
        self.table = np.asarray(table, dtype=float).reshape(-1, 2)
        self.n_slots = self.table.shape[0]
        super().__init__(
            self._u, homotopy_tag=homotopy_tag, period_divisor=period_divisor
        )

    def _slot(self, t):
        return np.minimum(
            (wrap01(t) * self.n_slots).astype(np.int64), self.n_slots - 1
        )

    def _u(self, t):
        t = np.asarray(t, dtype=float)
        return self.table[self._slot(t)]

    def vector_pieces(self, t_lo, t_hi):
        """Split [t_lo, t_hi] at slot boundaries; u constant on each piece."""
        pieces = []
        s = self.n_slots
        first = math.floor(t_lo * s)
        last = math.ceil(t_hi * s) - 1
        for k in range(first, last + 1):
            a = max(t_lo, k / s)
            b = min(t_hi, (k + 1) / s)
            if b <= a:
                continue
            vec = self.table[k % s]
            pieces.append((a, b, vec, vec))
        return pieces


def trivial_loop():
    return LinearTranslationLoop((0, 0), (0, 0), homotopy_tag="constant (contractible)")


def furstenberg_loop(beta):
    """h_t(y1, y2) = (y1 + t, y2 + beta): the area-preserving sweep loop."""
    return LinearTranslationLoop(
        (1, 0), (0.0, float(beta)), homotopy_tag="torus-sweep (non-contractible)"
    )


def coboundary_loop(g: TranslationLoop, alpha):
    """h(t) = g(t + alpha)^{-1} g(t): conjugates the plain rotation."""
    alpha = float(alpha)

    def u(t):
        t = np.asarray(t, dtype=float)
        return g.u(t) - g.u(wrap01(t + alpha))

    loop = TranslationLoop(u, homotopy_tag="coboundary (contractible)")

    def pieces(t_lo, t_hi):
        out = []
        for a, b, lo1, hi1 in g.vector_pieces(t_lo, t_hi):
            for a2, b2, lo2, hi2 in g.vector_pieces(a + alpha, b + alpha):
                aa = max(a, a2 - alpha)
                bb = min(b, b2 - alpha)
                if bb <= aa:
                    continue
                out.append((aa, bb, lo1 - hi2, hi1 - lo2))
        return out

    loop.vector_pieces = pieces
    return loop


# ---------------------------------------------------------------------------
# Skew products


class SkewProduct:
    """T(t, y) = (t + alpha, h_t(y)) on S1 x Y."""

    def __init__(self, alpha, loop: HamiltonianLoop):
        self.alpha = wrap01(float(alpha))
        self.loop = loop

    def apply(self, pts):
        pts = np.asarray(pts, dtype=float)
        t = pts[..., 0]
        out = np.empty_like(pts)
        out[..., 0] = wrap01(t + self.alpha)
        if isinstance(self.loop, TranslationLoop):
            out[..., 1:] = self.loop.translate_points(t, pts[..., 1:])
            return out
        # generic loops: group points by their (few) distinct t values
        flat_t = t.reshape(-1)
        flat_y = pts[..., 1:].reshape(-1, 2)
        res = np.empty_like(flat_y)
        for val in np.unique(flat_t):
            mask = flat_t == val
            res[mask] = self.loop.map_at(val).apply_points(flat_y[mask])
        out[..., 1:] = res.reshape(pts[..., 1:].shape)
        return out

    def affine(self):
        """(linear, offset) of T as an affine torus map, when exact.

        Requires a linear translation loop with integer rate; that is
        what lets closed-form observables pull back exactly.
        """
        if not isinstance(self.loop, LinearTranslationLoop):
            return None
        w = self.loop.rate
        lin = np.array(
            [[1, 0, 0], [int(round(w[0])), 1, 0], [int(round(w[1])), 0, 1]],
            dtype=np.int64,
        )
        off = np.array([self.alpha, self.loop.base[0], self.loop.base[1]])
        return lin, off


def skew_apply(T: SkewProduct, pts):
    return T.apply(pts)


def orbit(T: SkewProduct, p, n, cap=ORBIT_CAP):
    """[p, Tp, ..., T^{n-1} p]; refuses orbits longer than the cap."""
    if n > cap:
        raise OrbitCapError(f"orbit too long: {n} > cap {cap}")
    p = np.asarray(p, dtype=float)
    out = np.empty((n,) + p.shape)
    cur = wrap01(p)
    for k in range(n):
        out[k] = cur
        cur = T.apply(cur)
    return out


# ---------------------------------------------------------------------------
# Sequential systems


class SequentialSystem:
    """Time-dependent composition T^(n) = T_n o ... o T_1, T^(0) = id.

    Step maps are T_i(t, y) = (t + alpha_i, g_i(h_t(y))) for a shared
    base loop h and per-step conjugators g_i.  Built either from that
    decomposition or from raw step callables; only the decomposed form
    knows its conjugator chain.
    """

    def __init__(self, alphas, conjugators=None, loop=None, raw_steps=None):
        self.alphas = [wrap01(float(a)) for a in alphas]
        self.conjugators = conjugators
        self.loop = loop
        self.raw_steps = raw_steps
        if raw_steps is None and (conjugators is None or loop is None):
            raise InvalidFieldError(
                "need either (conjugators, loop) or raw step maps"
            )
        if conjugators is not None and len(conjugators) != len(self.alphas):
            raise InvalidFieldError("one conjugator per step required")

    @property
    def n_steps(self):
        return len(self.alphas)

    @property
    def decomposed(self):
        return self.conjugators is not None and self.loop is not None

    def step_apply(self, i, pts):
        """Apply T_{i+1} (0-based i) to points on S1 x Y."""
        if self.raw_steps is not None:
            return self.raw_steps[i](pts)
        pts = np.asarray(pts, dtype=float)
        t = pts[..., 0]
        y = self.loop.translate_points(t, pts[..., 1:]) if isinstance(
            self.loop, TranslationLoop
        ) else self._generic_loop_apply(t, pts[..., 1:])
        g = self.conjugators[i]
        shape = y.shape
        y = g.apply_points(y.reshape(-1, 2)).reshape(shape)
        out = np.empty_like(pts)
        out[..., 0] = wrap01(t + self.alphas[i])
        out[..., 1:] = y
        return out

    def _generic_loop_apply(self, t, pts_y):
        flat_t = t.reshape(-1)
        flat_y = pts_y.reshape(-1, 2)
        res = np.empty_like(flat_y)
        for val in np.unique(flat_t):
            mask = flat_t == val
            res[mask] = self.loop.map_at(val).apply_points(flat_y[mask])
        return res.reshape(pts_y.shape)

    def apply_upto(self, pts, n):
        if n > self.n_steps:
            raise InvalidFieldError(f"system has only {self.n_steps} steps")
        cur = wrap01(np.asarray(pts, dtype=float))
        for i in range(n):
            cur = self.step_apply(i, cur)
        return cur

    def conjugator_chain(self):
        """phi_0 = id, phi_i = phi_{i-1} o g_i^{-1}; so phi_i o g_i = phi_{i-1}."""
        if not self.decomposed:
            raise UnderdeterminedSequenceError(
                "underdetermined sequence: conjugator chain unavailable"
            )
        if not self.conjugators:
            raise InvalidFieldError("conjugator chain needs at least one step")
        g0 = self.conjugators[0]
        acc = g0.inverse().compose(g0)  # identity of the right map type
        chain = [acc]
        for g in self.conjugators:
            acc = acc.compose(g.inverse())
            chain.append(acc)
        return chain


def sequential_apply(S: SequentialSystem, pts, n):
    return S.apply_upto(pts, n)


# ---------------------------------------------------------------------------
# Birkhoff statistics

_POLY_TERM_CAP = 4096


def _closed_form_sum(F: ScalarField, T: SkewProduct, n):
    """Accumulated TrigPoly of sum_{k<n} F o T^k, or None."""
    if F.closed_form is None or F.domain != "S1xY":
        return None
    aff = T.affine()
    if aff is None:
        return None
    lin, off = aff
    acc = F.closed_form.copy()
    cur = F.closed_form
    for _ in range(1, n):
        cur = cur.compose_affine(lin, off)
        acc = acc + cur
        if acc.n_terms > _POLY_TERM_CAP:
            return None
    return acc


def birkhoff_field_sum(F: ScalarField, T: SkewProduct, n) -> ScalarField:
    """sum_{k<n} F o T^k as a field on S1 x Y (closed form kept when exact)."""
    if F.domain != "S1xY":
        raise InvalidFieldError("birkhoff sums need an observable on S1 x Y")
    poly = _closed_form_sum(F, T, n)
    if poly is not None:
        return ScalarField.from_closed_form(F.grid, poly, "S1xY")
    pts = F.grid.sty_mesh()
    acc = np.zeros(pts.shape[:-1])
    cur = pts
    for _ in range(n):
        acc += F.evaluate(cur)
        cur = T.apply(cur)
    return ScalarField(F.grid, acc, "S1xY")


def birkhoff_uniform_deviation(T: SkewProduct, F: ScalarField, n) -> float:
    """D_n = sup over starting points of |(1/n) sum_{k<n} F(T^k x)|.

    The sup is exact (continuum) when the accumulated closed form holds a
    single harmonic; otherwise it is the max over grid starting points.
    """
    poly = _closed_form_sum(F, T, n)
    if poly is not None:
        exact = poly.sup_abs_exact()
        if exact is not None:
            return exact / n
        return float(np.abs(poly(F.grid.sty_mesh())).max()) / n
    pts = F.grid.sty_mesh().reshape(-1, 3)
    acc = np.zeros(pts.shape[0])
    cur = pts
    for _ in range(n):
        acc += F.evaluate(cur)
        cur = T.apply(cur)
    return float(np.abs(acc).max()) / n


@dataclass(frozen=True)
class ErgodicityVerdict:
    """Outcome of the uniform-average search; converged=False is inconclusive,
    not a refutation: grid sups are one-sided witnesses."""

    converged: bool
    n: int | None
    deviation: float
    eps: float
    n_max: int


def unique_ergodicity_diagnostic(
    T: SkewProduct, F: ScalarField, eps, n_max, check_every=1
) -> ErgodicityVerdict:
    """Smallest n <= n_max with D_n < eps, scanning incrementally."""
    if n_max > ORBIT_CAP:
        raise OrbitCapError(f"orbit too long: {n_max} > cap {ORBIT_CAP}")
    pts = F.grid.sty_mesh().reshape(-1, 3)
    acc = np.zeros(pts.shape[0])
    cur = pts
    dev = math.inf
    for k in range(1, n_max + 1):
        acc += F.evaluate(cur)
        cur = T.apply(cur)
        if k % check_every == 0 or k == n_max:
            dev = float(np.abs(acc).max()) / k
            if dev < eps:
                return ErgodicityVerdict(True, k, dev, eps, n_max)
    return ErgodicityVerdict(False, None, dev, eps, n_max)


# ---------------------------------------------------------------------------
# Coverage (minimality) diagnostic


@dataclass(frozen=True)
class CoverageVerdict:
    covered: bool
    step: int | None
    n_covered: int
    n_cells: int


def _axis_span(lo, hi, n):
    """Grid cells meeting [lo, hi) on a circle axis of n cells.

    Cell i covers [(i-1/2)/n, (i+1/2)/n); strict comparisons keep exact
    single-cell images (identity maps) from leaking into neighbors.
    """
    i_min = np.floor(lo * n - 0.5).astype(np.int64) + 1
    i_max = np.ceil(hi * n + 0.5).astype(np.int64) - 1
    return i_min, i_max


def minimality_diagnostic(
    grid: TorusGrid, T: SkewProduct, start_mask, max_iter
) -> CoverageVerdict:
    """Iterate cell-set images until the grid is covered or the cap hits.

    Images are conservative box hulls: each cell's true image sits inside
    the marked block, so 'covered' is a strong witness while 'not
    covered' after the cap is inconclusive.  Requires a translation-family
    loop (exact interval bounds).
    """
    if not isinstance(T.loop, TranslationLoop):
        raise InvalidFieldError("coverage diagnostic needs a translation-family loop")
    if not hasattr(T.loop, "vector_pieces"):
        raise InvalidFieldError("loop does not expose interval bounds")
    res_t = grid.res_t
    n1, n2 = grid.res_y
    covered = np.asarray(start_mask, dtype=bool).copy()
    if covered.shape != (res_t, n1, n2):
        raise InvalidFieldError("start mask shape mismatch")
    frontier = covered.copy()
    total = covered.size
    alpha = T.alpha
    for step in range(1, max_iter + 1):
        if not frontier.any():
            return CoverageVerdict(False, None, int(covered.sum()), total)
        it, i1, i2 = np.nonzero(frontier)
        new = np.zeros_like(covered)
        t_lo = (it - 0.5) / res_t
        t_hi = (it + 0.5) / res_t
        # group frontier cells by t index so piece lookups stay scalar
        for tcell in np.unique(it):
            sel = it == tcell
            a = float(t_lo[sel][0])
            b = float(t_hi[sel][0])
            j1 = i1[sel]
            j2 = i2[sel]
            for pa, pb, vlo, vhi in T.loop.vector_pieces(a, b):
                # image t interval of the piece, after rotation
                tmin, tmax = _axis_span(pa + alpha, pb + alpha, res_t)
                y1min, y1max = _axis_span(
                    (j1 - 0.5) / n1 + vlo[0], (j1 + 0.5) / n1 + vhi[0], n1
                )
                y2min, y2max = _axis_span(
                    (j2 - 0.5) / n2 + vlo[1], (j2 + 0.5) / n2 + vhi[1], n2
                )
                for dt in range(tmin, tmax + 1):
                    ti = dt % res_t
                    for o1 in range(int((y1max - y1min).max()) + 1):
                        row = np.mod(y1min + o1, n1)
                        ok1 = y1min + o1 <= y1max
                        for o2 in range(int((y2max - y2min).max()) + 1):
                            col = np.mod(y2min + o2, n2)
                            ok = ok1 & (y2min + o2 <= y2max)
                            new[ti, row[ok], col[ok]] = True
        frontier = new & ~covered
        covered |= new
        if covered.all():
            return CoverageVerdict(True, step, total, total)
    return CoverageVerdict(False, None, int(covered.sum()), total)
