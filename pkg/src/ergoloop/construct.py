"""Finite-stage loop constructions on top of the averaging machinery.

Everything here manufactures explicit loops of cell maps and then
audits them.  The chain of custody matters more than the objects: a
loop is returned only after its advertised inequalities have been
recomputed by quadrature on the loop's own refined time grid, with the
intermediate bounds asserted rather than trusted.  Residual-set
statements have no finite witness, so the certificates below are the
stand-ins: a circle sweep that meets every fiber, orbit coverage of
every grid cell under a conjugated shift, and ergodic averages driven
under a tolerance at some explicit step count.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .averaging import FLATTEN_MAX_ITER, OperatorChain, flatten_sup
from .covering import grid_covering_oracle
from .errors import (
    ErgoloopError,
    GridTooCoarseError,
    InvalidFieldError,
    OrbitCapError,
    SweepError,
)
from .phase import (
    IRRATIONALS,
    CircleCoord,
    ScalarField,
    TorusGrid,
    TorusTranslation,
    TrigPoly,
    require_zero_mean,
    sup_norm,
    wrap01,
)

ITERATION_CAP = 10**5
MAX_RATIONALITY_DENOMINATOR = 4096

# The time modulus is measured at grid samples, which underestimates the
# drift between refined samples by up to one extra lag; starting the
# sample count at twice the grid estimate absorbs that, and the refined
# certificate still re-checks the real thing.
_MODULUS_HEADROOM = 2
_MODULUS_RETRIES = 4


def _as_rationality(r) -> Fraction:
    if isinstance(r, float):
        raise InvalidFieldError(
            "rationality must be exact: pass a Fraction, integer, or 'p/q' string"
        )
    r = Fraction(r)
    if r.denominator > MAX_RATIONALITY_DENOMINATOR:
        raise InvalidFieldError(
            f"rationality denominator {r.denominator} exceeds "
            f"{MAX_RATIONALITY_DENOMINATOR}"
        )
    return r


def _catalog_alpha(alpha) -> CircleCoord:
    """Resolve a catalog name or a numeric value to a circle point."""
    if isinstance(alpha, str):
        try:
            return CircleCoord(IRRATIONALS[alpha])
        except KeyError:
            raise InvalidFieldError(f"unknown irrational {alpha!r}") from None
    return CircleCoord(float(alpha))


# ---------------------------------------------------------------------------
# Loop types


@dataclass(frozen=True, eq=False)
class CellMapLoop:
    """Piecewise-constant loop of cell maps on the circle.

    The value on [p/K, (p+1)/K) is maps[p].  Step loops are the grid
    stand-in for smooth loops in the acting group: averaging a field
    along one is exactly the weighted average over the pieces.
    """

    grid: TorusGrid
    maps: tuple

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        if not self.maps:
            raise InvalidFieldError("a loop needs at least one piece")
        for m in self.maps:
            if m.grid != self.grid:
                raise InvalidFieldError("loop pieces must share the loop's grid")

    @property
    def n_pieces(self):
        return len(self.maps)

    def piece_indices(self, s):
        s = wrap01(np.asarray(s, dtype=float))
        idx = np.floor(s * self.n_pieces).astype(np.int64)
        return np.minimum(idx, self.n_pieces - 1)

    def value_at(self, s):
        return self.maps[int(self.piece_indices(np.float64(s)))]


@dataclass(frozen=True, eq=False)
class PeriodicLoop:
    """Loop g(t) = h(M t) with g(t + r) = g(t) built in, not approximated.

    The repetition M is a multiple of the denominator of the rationality
    r, so M r is an integer and the piece index of g at t + r equals the
    one at t identically.  On sample grids the index is computed in
    integer arithmetic (`sample_pieces`), which keeps the periodicity
    claim exact at machine level rather than merely close.
    """

    base: CellMapLoop
    repetition: int
    rationality: Fraction

    def __post_init__(self):
        object.__setattr__(self, "repetition", int(self.repetition))
        object.__setattr__(self, "rationality", Fraction(self.rationality))
        if self.repetition < 1:
            raise InvalidFieldError("repetition must be a positive integer")
        if self.repetition % self.rationality.denominator != 0:
            raise InvalidFieldError(
                "repetition must be a multiple of the rationality denominator"
            )

    @property
    def grid(self):
        return self.base.grid

    @property
    def span(self):
        """Pieces of g over one full circle: repetition times base pieces."""
        return self.repetition * self.base.n_pieces

    def native_res_t(self, minimum=1):
        """Smallest time resolution >= minimum on which g is cellwise constant."""
        return self.span * max(1, -(-int(minimum) // self.span))

    def piece_indices(self, t):
        return self.base.piece_indices(wrap01(t) * self.repetition)

    def value_at(self, t):
        return self.base.maps[int(self.piece_indices(np.float64(t)))]

    def sample_pieces(self, res_t):
        """Base-piece index at each sample j/res_t, in exact integer arithmetic.

        floor(frac(M j / res) * K) == ((j M mod res) K) // res, which never
        suffers the float rounding that could misplace a piece boundary.
        """
        res_t = int(res_t)
        j = np.arange(res_t, dtype=np.int64)
        return (j * self.repetition % res_t) * self.base.n_pieces // res_t


@dataclass(frozen=True, eq=False)
class ConjugatedShift:
    """The fiberwise conjugation phi(t, y) = (t, g(t) y) with its shift.

    alpha records the circle shift the conjugation is certified
    against; the rationality r of the loop is what phi commutes with:
    phi o S_r = S_r o phi because g is r-periodic.
    """

    grid: TorusGrid
    loop: PeriodicLoop
    alpha: CircleCoord

    def __post_init__(self):
        if self.loop.grid != self.grid:
            raise InvalidFieldError("loop and conjugation grids differ")
        if not isinstance(self.alpha, CircleCoord):
            object.__setattr__(self, "alpha", CircleCoord(float(self.alpha)))

    @property
    def rationality(self):
        return self.loop.rationality

    def value_at(self, t):
        return self.loop.value_at(t)

    def _carry(self, pts, inverse):
        out = np.array(pts, dtype=float, copy=True)
        out[..., 0] = wrap01(out[..., 0])
        flat = out.reshape(-1, 3)
        pieces = self.loop.piece_indices(flat[:, 0])
        for p in np.unique(pieces):
            rows = pieces == p
            m = self.loop.base.maps[p]
            ys = flat[rows, 1:]
            flat[rows, 1:] = (
                m.apply_inverse_points(ys) if inverse else m.apply_points(ys)
            )
        return out

    def apply_points(self, pts):
        return self._carry(pts, inverse=False)

    def apply_inverse_points(self, pts):
        return self._carry(pts, inverse=True)

    def step_points(self, pts):
        """One step of the conjugated shift phi^{-1} o S_alpha o phi."""
        cur = self.apply_points(pts)
        cur[..., 0] = wrap01(cur[..., 0] + float(self.alpha))
        return self.apply_inverse_points(cur)

    def commutation_defect(self, res_t=None) -> int:
        """Samples where g(t + r) picks a different piece than g(t); 0 expected."""
        res = self.loop.native_res_t(minimum=res_t or self.grid.res_t)
        pieces = self.loop.sample_pieces(res)
        r = self.loop.rationality
        offset = res * r.numerator // r.denominator  # exact: denominator | span | res
        return int((pieces != np.roll(pieces, -offset)).sum())


@dataclass(frozen=True, eq=False)
class ProductSet:
    """Product cell set: t_count consecutive time cells times a y-cell set."""

    grid: TorusGrid
    t_start: int
    t_count: int
    v_cells: np.ndarray

    def __post_init__(self):
        res = self.grid.res_t
        object.__setattr__(self, "t_start", int(self.t_start) % res)
        object.__setattr__(self, "t_count", int(self.t_count))
        if not 1 <= self.t_count <= res:
            raise InvalidFieldError("t_count must cover between 1 and res_t cells")
        cells = np.unique(np.asarray(self.v_cells, dtype=np.int64))
        if cells.size == 0:
            raise InvalidFieldError("product set needs a non-empty y-cell part")
        if cells[0] < 0 or cells[-1] >= self.grid.n_y_cells:
            raise InvalidFieldError("y cells out of range for the grid")
        cells.setflags(write=False)
        object.__setattr__(self, "v_cells", cells)

    @property
    def t_indices(self):
        return (self.t_start + np.arange(self.t_count)) % self.grid.res_t


# ---------------------------------------------------------------------------
# Steps 1 and 2: multi-target flattening and fiberwise centering


def multi_target_average(
    fields,
    eps: float,
    covering_oracle=None,
    max_iter: int = FLATTEN_MAX_ITER,
) -> OperatorChain:
    """One composed averaging operator driving every listed field under eps.

    The targets are flattened in sequence, each against the image of the
    chain built so far; averaging against any family is non-expansive,
    so later factors cannot undo earlier targets.  The final chain is
    re-applied to every input and all sup norms are re-checked.
    """
    fields = list(fields)
    if not fields:
        raise InvalidFieldError("no target fields given")
    grid = fields[0].grid
    for f in fields:
        if f.domain != "Y":
            raise InvalidFieldError("multi-target averaging works on fields on Y")
        if f.grid != grid:
            raise InvalidFieldError("target fields must share one grid")
        require_zero_mean(f)
        if sup_norm(f) > 1.0 + 1e-12:
            raise InvalidFieldError("targets must satisfy sup norm <= 1")
    if covering_oracle is None:
        covering_oracle = grid_covering_oracle(grid)
    chain = OperatorChain(())
    for f in fields:
        cur = chain.apply(f)
        if sup_norm(cur) >= eps:
            chain = chain.then(flatten_sup(cur, covering_oracle, eps, max_iter))
    for i, f in enumerate(fields):
        got = sup_norm(chain.apply(f))
        if got >= eps:
            raise ErgoloopError(
                f"multi-target recheck failed: target {i} still at {got:.3e}"
            )
    return chain


def fiberwise_center(F: ScalarField) -> ScalarField:
    """Remove each time fiber's mean; idempotent.

    When a closed form is present the t-only harmonics are subtracted
    from it as well, provided they reproduce the sampled fiber means
    (aliased harmonics do not, and then the closed form is dropped
    rather than left inconsistent with the samples).
    """
    if F.domain != "S1xY":
        raise InvalidFieldError("fiberwise centering needs a field on S1 x Y")
    means = F.samples.mean(axis=(1, 2), keepdims=True)
    poly = None
    if F.closed_form is not None:
        fiber_part = TrigPoly(3)
        for freq, coef in F.closed_form.terms.items():
            if freq[1] == 0 and freq[2] == 0:
                fiber_part = fiber_part + TrigPoly.harmonic(3, freq, coef)
        t_col = np.zeros((F.grid.res_t, 3))
        t_col[:, 0] = F.grid.t_values
        scale = max(sup_norm(F), 1.0)
        if np.allclose(fiber_part(t_col), means.ravel(), atol=1e-12 * scale, rtol=0.0):
            poly = F.closed_form - fiber_part
    return F.with_samples(F.samples - means, poly)


def _require_fiberwise_centered(F: ScalarField):
    scale = max(sup_norm(F), 1.0)
    worst = float(np.abs(F.samples.mean(axis=(1, 2))).max())
    if worst > 1e-9 * scale:
        raise InvalidFieldError(
            "field is not fiberwise centered; apply fiberwise_center first"
        )


# ---------------------------------------------------------------------------
# Steps 3-5: the rationality-periodic loop with small fiber integrals


@dataclass(frozen=True)
class LoopCertificate:
    """Quadrature audit of one loop/field pair on the refined time grid.

    integral_profile is the fiber integral of F(t, g(t)^{-1} y) at every
    grid y; interval_terms are the per-interval averaged contributions
    (the J terms), interval_drift the worst in-interval field drift, and
    anchor_integrals the inner-loop fiber integrals at the construction
    anchors (empty when no anchor count was requested).
    """

    res_t: int
    integral_profile: np.ndarray
    interval_terms: np.ndarray
    interval_drift: np.ndarray
    anchor_integrals: np.ndarray


def _translation_vectors(loop: PeriodicLoop):
    shifts = []
    for m in loop.base.maps:
        if not isinstance(m, TorusTranslation):
            return None
        shifts.append(m.shift)
    return shifts


def _refined_samples(F: ScalarField, res_t: int, chunk: int = 4096) -> np.ndarray:
    """F sampled on a finer uniform time grid, chunked to bound memory."""
    if res_t == F.grid.res_t:
        return F.samples
    n1, n2 = F.grid.res_y
    mesh_y = F.grid.y_mesh()
    out = np.empty((res_t, n1, n2))
    ts = np.arange(res_t) / res_t
    for lo in range(0, res_t, chunk):
        hi = min(lo + chunk, res_t)
        pts = np.empty((hi - lo, n1, n2, 3))
        pts[..., 0] = ts[lo:hi, None, None]
        pts[..., 1:] = mesh_y[None]
        out[lo:hi] = F.evaluate(pts)
    return out


def _rolled_average(rows: np.ndarray, shifts) -> np.ndarray:
    """Mean over the translation family of each row, by explicit rolls."""
    acc = np.zeros_like(rows)
    for s in shifts:
        acc += np.roll(rows, s, axis=(-2, -1))
    return acc / len(shifts)


def loop_certificate(
    F: ScalarField, loop: PeriodicLoop, anchor_count=None, res_t=None
) -> LoopCertificate:
    """Recompute every quantity the loop construction promises.

    Works on the smallest refined grid on which g is cellwise constant
    (so piece lookups are exact integers) and at least as fine as the
    field's own grid.  Fields without a closed form are extended by
    their periodic interpolant.
    """
    if F.domain != "S1xY":
        raise InvalidFieldError("loop certificates need a field on S1 x Y")
    if loop.grid.res_y != F.grid.res_y:
        raise InvalidFieldError("loop and field live on different y grids")
    shifts = _translation_vectors(loop)
    if shifts is None:
        raise InvalidFieldError("certificates expect a loop of translations")
    res = loop.native_res_t(minimum=res_t or F.grid.res_t)
    m_rep = loop.repetition
    pieces = loop.sample_pieces(res)
    vals = _refined_samples(F, res)

    # fiber integral of F(t, g(t)^{-1} y): group samples by piece, push
    # each partial sum forward by that piece's translation
    profile = np.zeros(F.grid.res_y)
    order = np.argsort(pieces, kind="stable")
    bounds = np.searchsorted(pieces[order], np.arange(loop.base.n_pieces + 1))
    for p in range(loop.base.n_pieces):
        rows = order[bounds[p] : bounds[p + 1]]
        if rows.size:
            profile += np.roll(vals[rows].sum(axis=0), shifts[p], axis=(0, 1))
    profile /= res

    # interval quantities: res is a multiple of span, so each of the M
    # intervals holds the same stack of sample rows
    per = res // m_rep
    blocks = vals.reshape(m_rep, per, *F.grid.res_y)
    drift = np.abs(blocks - blocks[:, :1]).max(axis=(1, 2, 3))
    j_fields = _rolled_average(blocks[:, 0], shifts) / m_rep
    terms = np.abs(j_fields).max(axis=(1, 2))

    anchors = np.zeros(0)
    if anchor_count:
        n1, n2 = F.grid.res_y
        mesh_y = F.grid.y_mesh()
        pts = np.empty((int(anchor_count), n1, n2, 3))
        pts[..., 0] = (np.arange(int(anchor_count)) / anchor_count)[:, None, None]
        pts[..., 1:] = mesh_y[None]
        rows = F.evaluate(pts)
        anchors = np.abs(_rolled_average(rows, shifts)).max(axis=(1, 2))

    return LoopCertificate(res, profile, terms, drift, anchors)


def loop_integral_recheck(F: ScalarField, loop: PeriodicLoop, res_t=None) -> np.ndarray:
    """Fiber integral of F(t, g(t)^{-1} y) by direct point evaluation.

    Deliberately takes the other route than loop_certificate: instead of
    rolling sample rows, it evaluates F at the inverse-shifted mesh
    points, so the two quadratures can only agree through the fields
    themselves.
    """
    res = loop.native_res_t(minimum=res_t or F.grid.res_t)
    pieces = loop.sample_pieces(res)
    ts = np.arange(res) / res
    mesh_y = F.grid.y_mesh()
    n1, n2 = F.grid.res_y
    total = np.zeros((n1, n2))
    for p in np.unique(pieces):
        rows = np.flatnonzero(pieces == p)
        shifted = loop.base.maps[p].apply_inverse_points(mesh_y)
        pts = np.empty((rows.size, n1, n2, 3))
        pts[..., 0] = ts[rows, None, None]
        pts[..., 1:] = shifted[None]
        total += F.evaluate(pts).sum(axis=0)
    return total / res


def _grid_modulus_lag(F: ScalarField, bound: float) -> int:
    """Largest sample lag whose accumulated time drift stays under bound."""
    lag = 0
    worst = 0.0
    while lag < F.grid.res_t // 2:
        step = float(np.abs(np.roll(F.samples, -(lag + 1), axis=0) - F.samples).max())
        worst = max(worst, step)
        if worst >= bound:
            break
        lag += 1
    return lag


def _translation_cycle(grid: TorusGrid) -> CellMapLoop:
    n1, n2 = grid.res_y
    maps = tuple(
        TorusTranslation(grid, (d1, d2)) for d1 in range(n1) for d2 in range(n2)
    )
    return CellMapLoop(grid, maps)


def small_integral_loop(F: ScalarField, eps: float, r) -> PeriodicLoop:
    """Loop g(t) = h(M t) with g(t + r) = g(t) and every fiber integral under eps.

    The inner loop h steps through the full grid translation family, so
    averaging any fiberwise-centered field along one h-cycle is an exact
    circle average; the repetition M is the smallest multiple of the
    rationality denominator above the modulus-of-continuity sample count
    N (time drift below eps/9 across one interval).  All the
    intermediate inequalities are asserted on the refined grid before
    the loop is returned: per-interval drift < eps/9, inner-loop fiber
    integrals at the N anchors < eps/9, per-interval terms < eps/(3M),
    and the assembled fiber integral below drift + terms and below eps.

    Cost scales with res_t * (n1 * n2)^2; this is a desk-scale
    construction, not a bulk transform.
    """
    if F.domain != "S1xY":
        raise InvalidFieldError("loop construction needs a field on S1 x Y")
    if not eps > 0:
        raise InvalidFieldError("eps must be positive")
    r = _as_rationality(r)
    _require_fiberwise_centered(F)
    grid = F.grid
    q = r.denominator

    if sup_norm(F) == 0.0:
        identity = CellMapLoop(grid, (TorusTranslation(grid, (0, 0)),))
        return PeriodicLoop(identity, q, r)

    bound = eps / 9.0
    lag = _grid_modulus_lag(F, bound)
    if lag == 0:
        raise GridTooCoarseError(f"grid too coarse for eps={eps:g}")
    n_points = _MODULUS_HEADROOM * (-(-grid.res_t // (lag + 1)))

    base = _translation_cycle(grid)
    for _ in range(_MODULUS_RETRIES):
        m_rep = q * (n_points // q + 1)
        loop = PeriodicLoop(base, m_rep, r)
        cert = loop_certificate(F, loop, anchor_count=n_points)
        if cert.interval_drift.max() < bound:
            break
        n_points *= 2
    else:
        raise GridTooCoarseError(f"grid too coarse for eps={eps:g}")

    fp_slack = 1e-12 * max(sup_norm(F), 1.0)
    if cert.anchor_integrals.max() >= bound:
        raise ErgoloopError(
            "inner loop misses the anchor integrals: "
            f"{cert.anchor_integrals.max():.3e} >= {bound:.3e}"
        )
    term_bound = eps / (3.0 * m_rep)
    if cert.interval_terms.max() >= term_bound:
        raise ErgoloopError(
            f"interval term {cert.interval_terms.max():.3e} >= eps/(3M)"
        )
    assembled = cert.interval_drift.mean() + cert.interval_terms.sum()
    worst = float(np.abs(cert.integral_profile).max())
    if worst > assembled + fp_slack:
        raise ErgoloopError(
            "fiber integral exceeds its decomposition bound: "
            f"{worst:.3e} > {assembled:.3e}"
        )
    if worst >= eps:
        raise ErgoloopError(f"fiber integral {worst:.3e} not under eps={eps:g}")
    return loop


# ---------------------------------------------------------------------------
# The two conjugator constructions and their diagnostics


def _cover_shifts(grid: TorusGrid, v_mask: np.ndarray):
    """Greedy translations whose copies of V cover Y.

    Coverage counts for all candidate shifts come from one circular
    cross-correlation per round, so each round is O(n log n) and the
    tie-break (first flat index) is deterministic.
    """
    uncovered = np.ones(grid.res_y, dtype=bool)
    fv = np.conj(np.fft.fft2(v_mask.astype(float)))
    vi, vj = np.nonzero(v_mask)
    shifts = []
    while uncovered.any():
        corr = np.fft.ifft2(np.fft.fft2(uncovered.astype(float)) * fv).real
        counts = np.rint(corr).astype(np.int64)
        flat = int(counts.argmax())
        s = (flat // grid.res_y[1], flat % grid.res_y[1])
        if counts[s] <= 0:
            raise SweepError("sweep failed")
        shifts.append(s)
        uncovered[(vi + s[0]) % grid.res_y[0], (vj + s[1]) % grid.res_y[1]] = False
    return shifts


def circle_sweep_gap(shift: ConjugatedShift, window: ProductSet) -> int:
    """Y cells missed by the sweep {g(t) V : t in Delta}; 0 means phi(U)
    meets every circle S1 x {y}."""
    grid = window.grid
    pieces = shift.loop.sample_pieces(grid.res_t)[window.t_indices]
    covered = np.zeros(grid.n_y_cells, dtype=bool)
    for p in np.unique(pieces):
        covered[shift.loop.base.maps[p].apply_cells(window.v_cells)] = True
    return int(grid.n_y_cells - covered.sum())


def conjugator_for_minimality(window: ProductSet, r, alpha="golden") -> ConjugatedShift:
    """Conjugation phi(t,y) = (t, g(t) y) whose sweep of V over Delta covers Y.

    g is r-periodic by construction: with q the rationality denominator
    dividing res_t, g is constant on residue classes of t-cells mod
    res_t/q, and the cover translations (greedy, at most one per class
    met by Delta) are placed only in classes Delta actually meets.
    """
    r = _as_rationality(r)
    grid = window.grid
    q = r.denominator
    if grid.res_t % q:
        raise InvalidFieldError(
            "rationality denominator must divide the time resolution"
        )
    v_mask = np.zeros(grid.n_y_cells, dtype=bool)
    v_mask[window.v_cells] = True
    shifts = _cover_shifts(grid, v_mask.reshape(grid.res_y))
    k_pieces = grid.res_t // q
    hit = sorted({int(j) % k_pieces for j in window.t_indices})
    if len(shifts) > len(hit):
        raise SweepError("sweep failed")
    maps = [TorusTranslation(grid, (0, 0))] * k_pieces
    for piece, s in zip(hit, shifts):
        maps[piece] = TorusTranslation(grid, s)
    loop = PeriodicLoop(CellMapLoop(grid, tuple(maps)), q, r)
    conj = ConjugatedShift(grid, loop, _catalog_alpha(alpha))
    if circle_sweep_gap(conj, window):
        raise SweepError("sweep failed")
    return conj


def rotation_hit_table(res_t: int, alpha: float, cap: int = ITERATION_CAP):
    """first_hit[d]: least i such that one t-cell arc, rotated i times by
    alpha, covers the sample point d cells away; -1 where cap ran out."""
    pos = np.arange(res_t) / res_t
    first = np.full(res_t, -1, dtype=np.int64)
    half = 0.5 / res_t
    for i in range(int(cap) + 1):
        hit = (first < 0) & ((pos < half) | (pos > 1.0 - half))
        first[hit] = i
        if (first >= 0).all():
            break
        pos = wrap01(pos - alpha)
    return first


def conjugated_orbit_coverage(
    shift: ConjugatedShift, window: ProductSet, cap: int = ITERATION_CAP
) -> int:
    """Steps of phi^{-1} S_alpha phi after which the orbit of U covers
    every grid cell.

    Uses the conjugation identity: the union of forward images of U is
    phi^{-1} of the union of rotated images of W = phi(U), so coverage
    reduces to rotating W's time arcs fiber by fiber.  Raises when some
    cell stays uncovered within the cap.
    """
    grid = window.grid
    res = grid.res_t
    table = rotation_hit_table(res, float(shift.alpha), cap)
    pieces = shift.loop.sample_pieces(res)
    carpet = np.zeros((res, grid.n_y_cells), dtype=bool)
    for j in window.t_indices:
        j = int(j)
        cells = shift.loop.base.maps[pieces[j]].apply_cells(window.v_cells)
        carpet[j, cells] = True
    idx = np.arange(res)
    lookup = table[(idx[:, None] - idx[None, :]) % res]  # [target, source]
    unreachable = np.iinfo(np.int64).max
    lookup = np.where(lookup < 0, unreachable, lookup)
    worst = 0
    for y in range(grid.n_y_cells):
        js = np.flatnonzero(carpet[:, y])
        if js.size == 0:
            raise SweepError("sweep failed")
        need = lookup[:, js].min(axis=1)
        top = int(need.max())
        if top > cap:
            raise OrbitCapError(f"orbit coverage needs more than {cap} steps")
        worst = max(worst, top)
    return worst


def _ergodic_sup_stream(F: ScalarField, shift: ConjugatedShift, res_t=None):
    """Yields sup |G_N| for N = 1, 2, ... along the conjugated shift."""
    grid = F.grid
    res = int(res_t or grid.res_t)
    ts = np.arange(res) / res
    mesh_y = grid.y_mesh()
    inv_mesh = np.stack(
        [m.apply_inverse_points(mesh_y) for m in shift.loop.base.maps]
    )
    alpha = float(shift.alpha)
    n1, n2 = grid.res_y
    sums = np.zeros((res, n1, n2))
    pts = np.empty((res, n1, n2, 3))
    j = 0
    while True:
        tj = wrap01(ts + j * alpha)
        pts[..., 0] = tj[:, None, None]
        pts[..., 1:] = inv_mesh[shift.loop.piece_indices(tj)]
        sums += F.evaluate(pts)
        j += 1
        yield float(np.abs(sums).max()) / j


def first_small_ergodic_average(
    F: ScalarField,
    shift: ConjugatedShift,
    eps: float,
    res_t=None,
    cap: int = ITERATION_CAP,
):
    """Least N with the ergodic average of F o phi^{-1} under eps in sup norm.

    G_N = (1/N) sum_j (F o phi^{-1}) o S_alpha^j is accumulated one
    rotation at a time on the sample grid; composing with phi permutes
    fibers, so ||G_N o phi|| equals the reported sup.  Returns (N, sup);
    raises when the cap is reached first.
    """
    stream = _ergodic_sup_stream(F, shift, res_t)
    for j in range(int(cap)):
        worst = next(stream)
        if worst < eps:
            return j + 1, worst
    raise OrbitCapError(f"ergodic averages stayed at or above {eps:g} for {cap} steps")


def ergodic_average_sups(
    F: ScalarField, shift: ConjugatedShift, n_steps: int, res_t=None
) -> np.ndarray:
    """Sup norms of the first n_steps ergodic averages, in visit order."""
    if n_steps < 1:
        raise InvalidFieldError("need at least one average")
    stream = _ergodic_sup_stream(F, shift, res_t)
    return np.array([next(stream) for _ in range(int(n_steps))])


def conjugator_for_unique_ergodicity(
    F: ScalarField,
    eps: float,
    r,
    alpha="golden",
    res_t=None,
    cap: int = ITERATION_CAP,
) -> ConjugatedShift:
    """Conjugation built from the small-integral loop of the centered field.

    Certifies, before returning: the fiber time integrals of the
    original field stay under eps/2 (independent quadrature route), and
    the ergodic averages of F o phi^{-1} along the catalog shift fall
    under eps at some explicit N <= cap.
    """
    if F.domain != "S1xY":
        raise InvalidFieldError("conjugator construction needs a field on S1 x Y")
    if not eps > 0:
        raise InvalidFieldError("eps must be positive")
    require_zero_mean(F)
    centered = fiberwise_center(F)
    loop = small_integral_loop(centered, 0.5 * eps, r)
    conj = ConjugatedShift(F.grid, loop, _catalog_alpha(alpha))
    profile = loop_integral_recheck(F, loop)
    worst = float(np.abs(profile).max())
    if worst >= 0.5 * eps:
        raise ErgoloopError(
            f"fiber time integral {worst:.3e} not under eps/2 after construction"
        )
    first_small_ergodic_average(F, conj, eps, res_t=res_t, cap=cap)
    return conj


def conjugation_identity_defect(shift: ConjugatedShift, pts, n_steps: int) -> int:
    """Cells where stepping n times differs from conjugating one n-fold shift.

    Iterates phi^{-1} S_alpha phi pointwise and compares against
    phi^{-1} o S_alpha^n o phi cellwise; 0 means the conjugation
    identity holds on the sample set.
    """
    pts = np.asarray(pts, dtype=float)
    stepped = pts
    for _ in range(int(n_steps)):
        stepped = shift.step_points(stepped)
    direct = shift.apply_points(pts)
    direct[..., 0] = wrap01(direct[..., 0] + n_steps * float(shift.alpha))
    direct = shift.apply_inverse_points(direct)
    res = shift.grid.res_t
    t_a = np.mod(np.rint(stepped[..., 0] * res).astype(np.int64), res)
    t_b = np.mod(np.rint(direct[..., 0] * res).astype(np.int64), res)
    y_a = shift.grid.y_cell_index(stepped[..., 1:])
    y_b = shift.grid.y_cell_index(direct[..., 1:])
    return int(((t_a != t_b) | (y_a != y_b)).sum())
