"""Discretized phase spaces.

The ambient space is S1 x Y with Y a two-torus carrying normalized
Lebesgue measure.  Everything here is grid-first: scalar fields are
sampled at the lattice points i/n (each such point is the center of a
wrapped cell of width 1/n), maps act either exactly on cells or
pointwise on coordinates, and integrals are uniform cell sums.

Fields built from the closed-form catalog (trigonometric monomials,
their products, and constants) additionally carry a ``TrigPoly``; those
fields evaluate exactly at off-grid points and, when a fiber holds a
single harmonic, expose the exact fiber sup.  That exactness is what
lets the decay demos match their analytic oracles far below what a
sample max could resolve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidFieldError

# Badly approximable rotation numbers used throughout the demos.
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SQRT2M1 = math.sqrt(2.0) - 1.0
IRRATIONALS = {"golden": GOLDEN, "sqrt2m1": SQRT2M1}

TWO_PI = 2.0 * math.pi


def wrap01(x):
    """Canonical circle representative in [0, 1).

    Values a hair below an integer can round up to exactly 1.0 after the
    floor subtraction; those collapse to 0.0 so the invariant is strict.
    """
    arr = np.asarray(x, dtype=float)
    out = arr - np.floor(arr)
    out = np.where(out >= 1.0, 0.0, out)
    if np.ndim(x) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CircleCoord:
    """A point of S1 = R/Z, stored by its representative in [0, 1)."""

    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", wrap01(self.value))

    def __add__(self, other):
        return CircleCoord(self.value + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        return CircleCoord(self.value - float(other))

    def __neg__(self):
        return CircleCoord(-self.value)

    def __float__(self):
        return self.value

    def distance(self, other):
        """Shortest arc distance on the circle."""
        d = abs(self.value - float(CircleCoord(float(other))))
        return min(d, 1.0 - d)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on S1 x Y; res_y are the two torus resolutions."""

    res_t: int
    res_y: tuple[int, int]

    def __post_init__(self):
        if self.res_t < 2 or min(self.res_y) < 2:
            raise InvalidFieldError("all resolutions must be >= 2")
        object.__setattr__(self, "res_y", (int(self.res_y[0]), int(self.res_y[1])))

    @property
    def cell_measure(self):
        return 1.0 / (self.res_y[0] * self.res_y[1])

    @property
    def n_y_cells(self):
        return self.res_y[0] * self.res_y[1]

    @property
    def t_values(self):
        return np.arange(self.res_t) / self.res_t

    @property
    def y1_values(self):
        return np.arange(self.res_y[0]) / self.res_y[0]

    @property
    def y2_values(self):
        return np.arange(self.res_y[1]) / self.res_y[1]

    def y_mesh(self):
        """Sample coordinates on Y, shape (n1, n2, 2)."""
        a, b = np.meshgrid(self.y1_values, self.y2_values, indexing="ij")
        return np.stack([a, b], axis=-1)

    def sty_mesh(self):
        """Sample coordinates on S1 x Y, shape (res_t, n1, n2, 3)."""
        t, a, b = np.meshgrid(
            self.t_values, self.y1_values, self.y2_values, indexing="ij"
        )
        return np.stack([t, a, b], axis=-1)

    def y_cell_index(self, pts):
        """Nearest-center cell of points on Y; pts shape (..., 2)."""
        n1, n2 = self.res_y
        i = np.mod(np.rint(np.asarray(pts)[..., 0] * n1).astype(np.int64), n1)
        j = np.mod(np.rint(np.asarray(pts)[..., 1] * n2).astype(np.int64), n2)
        return i * n2 + j

    def y_cell_center(self, flat_idx):
        n1, n2 = self.res_y
        idx = np.asarray(flat_idx)
        return np.stack([(idx // n2) / n1, (idx % n2) / n2], axis=-1)


def _fold_term(freq, coef):
    """Canonical (freq, coef) pair for the real form Re(c * e^{2pi i k.x}).

    The first nonzero frequency entry is made positive (conjugating the
    coefficient); the zero frequency keeps only the real part.
    """
    for component in freq:
        if component > 0:
            return tuple(freq), complex(coef)
        if component < 0:
            return tuple(-c for c in freq), complex(coef).conjugate()
    return tuple(freq), complex(complex(coef).real, 0.0)


class TrigPoly:
    """Real trigonometric polynomial Re sum_k c_k e^{2 pi i k.x}.

    Frequencies are integer vectors stored once per +-k pair with the
    sign canonicalized by `_fold_term`.  Supports the closed-form
    catalog: harmonics, constants, sums, real scalings, products, and
    composition with integer-linear affine torus maps.
    """

    __slots__ = ("dim", "terms")

    def __init__(self, dim, terms=None):
        self.dim = int(dim)
        self.terms: dict[tuple, complex] = {}
        if terms:
            for k, c in terms.items():
                self._add_term(k, c)

    def _add_term(self, freq, coef):
        k, c = _fold_term(freq, coef)
        cur = self.terms.get(k)
        val = c if cur is None else cur + c
        if val == 0:
            self.terms.pop(k, None)
        else:
            self.terms[k] = val

    # -- constructors -------------------------------------------------

    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: complex(float(value), 0.0)})

    @classmethod
    def harmonic(cls, dim, freq, coef=1.0):
        """Re(coef * e^{2 pi i freq.x}); cos for real coef, sin for -i."""
        if len(freq) != dim:
            raise InvalidFieldError("frequency vector has wrong length")
        return cls(dim, {tuple(int(f) for f in freq): complex(coef)})

    @classmethod
    def cosine(cls, dim, freq, amplitude=1.0, phase=0.0):
        """amplitude * cos(2 pi (freq.x + phase))."""
        coef = amplitude * complex(math.cos(TWO_PI * phase), math.sin(TWO_PI * phase))
        return cls.harmonic(dim, freq, coef)

    @classmethod
    def sine(cls, dim, freq, amplitude=1.0):
        return cls.harmonic(dim, freq, complex(0.0, -amplitude))

    # -- algebra -------------------------------------------------------

    @property
    def n_terms(self):
        return len(self.terms)

    def copy(self):
        out = TrigPoly(self.dim)
        out.terms = dict(self.terms)
        return out

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = TrigPoly.constant(self.dim, other)
        if self.dim != other.dim:
            raise InvalidFieldError("dimension mismatch")
        out = self.copy()
        for k, c in other.terms.items():
            out._add_term(k, c)
        return out

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other if isinstance(other, TrigPoly) else -float(other))

    def scale(self, factor):
        factor = float(factor)
        out = TrigPoly(self.dim)
        if factor != 0.0:
            out.terms = {k: c * factor for k, c in self.terms.items()}
        return out

    def _exponential_pairs(self):
        """Expand to exact complex form sum a_k e^{2 pi i k.x}."""
        pairs = []
        zero = (0,) * self.dim
        for k, c in self.terms.items():
            if k == zero:
                pairs.append((k, complex(c.real, 0.0)))
            else:
                pairs.append((k, c / 2.0))
                pairs.append((tuple(-q for q in k), c.conjugate() / 2.0))
        return pairs

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        if self.dim != other.dim:
            raise InvalidFieldError("dimension mismatch")
        out = TrigPoly(self.dim)
        acc: dict[tuple, complex] = {}
        for k1, a1 in self._exponential_pairs():
            for k2, a2 in other._exponential_pairs():
                k = tuple(p + q for p, q in zip(k1, k2))
                acc[k] = acc.get(k, 0.0 + 0.0j) + a1 * a2
        zero = (0,) * self.dim
        seen = set()
        for k, a in acc.items():
            if k in seen:
                continue
            if k == zero:
                out._add_term(k, complex(a.real, 0.0))
                seen.add(k)
                continue
            neg = tuple(-q for q in k)
            b = acc.get(neg, 0.0 + 0.0j)
            # real function: coefficient at -k is the conjugate; fold both
            kc, _ = _fold_term(k, 1.0)
            coef = (a + b.conjugate()) if kc == k else (b + a.conjugate())
            out._add_term(kc, coef)
            seen.add(k)
            seen.add(neg)
        return out

    __rmul__ = __mul__

    def compose_affine(self, linear, offset):
        """Pullback along x -> linear @ x + offset with integer `linear`."""
        lin = np.asarray(linear, dtype=np.int64)
        off = np.asarray(offset, dtype=float)
        if lin.shape != (self.dim, self.dim) or off.shape != (self.dim,):
            raise InvalidFieldError("affine data has wrong shape")
        out = TrigPoly(self.dim)
        for k, c in self.terms.items():
            kv = np.asarray(k, dtype=np.int64)
            new_k = tuple(int(v) for v in lin.T @ kv)
            phase = TWO_PI * float(kv @ off)
            out._add_term(new_k, c * complex(math.cos(phase), math.sin(phase)))
        return out

    def derivative(self, axis):
        out = TrigPoly(self.dim)
        for k, c in self.terms.items():
            if k[axis] != 0:
                out._add_term(k, c * complex(0.0, TWO_PI * k[axis]))
        return out

    # -- evaluation and analysis --------------------------------------

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if pts.shape[-1] != self.dim:
            raise InvalidFieldError("point dimension mismatch")
        out = np.zeros(pts.shape[:-1], dtype=float)
        zero = (0,) * self.dim
        for k, c in self.terms.items():
            if k == zero:
                out += c.real
            else:
                theta = TWO_PI * (pts @ np.asarray(k, dtype=float))
                out += c.real * np.cos(theta) - c.imag * np.sin(theta)
        return out

    def mean(self):
        """Integral over the full torus (the constant term)."""
        return self.terms.get((0,) * self.dim, 0.0 + 0.0j).real

    def drop_constant(self):
        out = self.copy()
        out.terms.pop((0,) * self.dim, None)
        return out

    def sup_abs_exact(self):
        """Exact sup |F| over the continuum torus, when a closed form exists.

        Available when at most one nonzero frequency class is present:
        sup |a0 + Re(c e^{i theta})| = |a0| + |c| since the harmonic
        sweeps the full circle.  Returns None otherwise.
        """
        zero = (0,) * self.dim
        const = self.terms.get(zero, 0.0 + 0.0j).real
        nonzero = [(k, c) for k, c in self.terms.items() if k != zero]
        if not nonzero:
            return abs(const)
        if len(nonzero) > 1:
            return None
        return abs(const) + abs(nonzero[0][1])

    def fiber_sup_profile(self, t_values):
        """Exact sup_y |F(t, .)| at each t, for fields on S1 x Y.

        Requires dim == 3 and a single nonzero y-frequency class; then
        F(t, y) = v(t) + Re(c(t) e^{2 pi i ky.y}) and the fiber sup is
        |v(t)| + |c(t)|.  Returns None when the structure is richer.
        """
        if self.dim != 3:
            raise InvalidFieldError("fiber profile needs a field on S1 x Y")
        t = np.asarray(t_values, dtype=float)
        v = np.zeros_like(t)
        classes: dict[tuple, list] = {}
        for k, c in self.terms.items():
            kt, ky = k[0], k[1:]
            if ky == (0, 0):
                theta = TWO_PI * kt * t
                v += c.real * np.cos(theta) - c.imag * np.sin(theta)
                continue
            ky_canon, _ = _fold_term(ky, 1.0)
            conjugate = ky_canon != ky
            classes.setdefault(ky_canon, []).append((kt, c, conjugate))
        if not classes:
            return np.abs(v)
        if len(classes) > 1:
            return None
        coef = np.zeros(t.shape, dtype=complex)
        for kt, c, conjugate in next(iter(classes.values())):
            rot = np.exp(2j * math.pi * kt * t)
            coef += np.conj(c * rot) if conjugate else c * rot
        return np.abs(v) + np.abs(coef)


# ---------------------------------------------------------------------------
# Scalar fields


_DOMAIN_NDIM = {"Y": 2, "S1xY": 3}


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Sampled real field on Y or S1 x Y, optionally with a closed form."""

    grid: TorusGrid
    samples: np.ndarray
    domain: str
    closed_form: TrigPoly | None = None

    def __post_init__(self):
        if self.domain not in _DOMAIN_NDIM:
            raise InvalidFieldError(f"unknown domain {self.domain!r}")
        expect = self._expected_shape()
        arr = np.asarray(self.samples, dtype=float)
        if arr.shape != expect:
            raise InvalidFieldError(
                f"samples shape {arr.shape} != grid shape {expect}"
            )
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        if self.closed_form is not None and self.closed_form.dim != _DOMAIN_NDIM[self.domain]:
            raise InvalidFieldError("closed form dimension mismatch")

    def _expected_shape(self):
        n1, n2 = self.grid.res_y
        if self.domain == "Y":
            return (n1, n2)
        return (self.grid.res_t, n1, n2)

    # -- constructors --------------------------------------------------

    @classmethod
    def from_closed_form(cls, grid, poly, domain):
        mesh = grid.y_mesh() if domain == "Y" else grid.sty_mesh()
        return cls(grid, poly(mesh), domain, closed_form=poly)

    @classmethod
    def from_function(cls, grid, fn, domain):
        """Sample a vectorized callable of the mesh coordinates."""
        mesh = grid.y_mesh() if domain == "Y" else grid.sty_mesh()
        vals = np.asarray(fn(mesh), dtype=float)
        return cls(grid, vals, domain)

    # -- evaluation ----------------------------------------------------

    def evaluate(self, pts):
        """Values at arbitrary points: exact via the closed form when
        present, multilinear periodic interpolation of samples otherwise."""
        if self.closed_form is not None:
            return self.closed_form(pts)
        return _interp_periodic(self.samples, self._to_cells(pts))

    def _to_cells(self, pts):
        pts = np.asarray(pts, dtype=float)
        if self.domain == "Y":
            scale = np.array(self.grid.res_y, dtype=float)
        else:
            scale = np.array([self.grid.res_t, *self.grid.res_y], dtype=float)
        return pts * scale

    def with_samples(self, samples, closed_form=None):
        return ScalarField(self.grid, samples, self.domain, closed_form)


def _interp_periodic(samples, cell_coords):
    """Multilinear interpolation with periodic wrap; coords in cell units."""
    coords = np.asarray(cell_coords, dtype=float)
    ndim = samples.ndim
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    out = np.zeros(coords.shape[:-1], dtype=float)
    for corner in range(1 << ndim):
        weight = np.ones(coords.shape[:-1], dtype=float)
        idx = []
        for axis in range(ndim):
            bit = (corner >> axis) & 1
            idx.append(np.mod(base[..., axis] + bit, samples.shape[axis]))
            w_axis = frac[..., axis] if bit else 1.0 - frac[..., axis]
            weight = weight * w_axis
        out += weight * samples[tuple(idx)]
    return out


# -- field operations -------------------------------------------------------


def field_mean(f: ScalarField) -> float:
    """Integral against the normalized product measure (uniform cells)."""
    return float(f.samples.mean())


def normalize_zero_mean(f: ScalarField) -> ScalarField:
    m = field_mean(f)
    poly = None
    if f.closed_form is not None:
        poly = f.closed_form - m
    return f.with_samples(f.samples - m, poly)


def require_zero_mean(f: ScalarField, tol=1e-12):
    m = abs(field_mean(f))
    scale = max(sup_norm(f), 1.0)
    if m > tol * scale:
        raise InvalidFieldError(f"field mean {m:.3e} exceeds zero-mean tolerance")


def sup_norm(f: ScalarField) -> float:
    """Max of |samples| (the grid sup)."""
    return float(np.abs(f.samples).max())


def fiber_sup_profile(f: ScalarField) -> np.ndarray:
    """sup_y |F(t, .)| per grid t; exact when the closed form allows.

    Fields whose fibers carry one harmonic report the continuum sup
    (amplitude), everything else falls back to the per-fiber sample max.
    """
    if f.domain != "S1xY":
        raise InvalidFieldError("fiber profile needs a field on S1 x Y")
    if f.closed_form is not None:
        prof = f.closed_form.fiber_sup_profile(f.grid.t_values)
        if prof is not None:
            return prof
    return np.abs(f.samples).reshape(f.grid.res_t, -1).max(axis=1)


def time_sup_integral(f: ScalarField) -> float:
    """Integral over t of sup_y |F(t, .)|, by the uniform t-grid sum."""
    return float(fiber_sup_profile(f).mean())


def add_fields(f: ScalarField, g: ScalarField) -> ScalarField:
    if f.domain != g.domain or f.grid != g.grid:
        raise InvalidFieldError("field domains or grids differ")
    poly = None
    if f.closed_form is not None and g.closed_form is not None:
        poly = f.closed_form + g.closed_form
    return f.with_samples(f.samples + g.samples, poly)


def scale_field(f: ScalarField, factor: float) -> ScalarField:
    poly = None if f.closed_form is None else f.closed_form.scale(factor)
    return f.with_samples(f.samples * float(factor), poly)


# ---------------------------------------------------------------------------
# Cell maps: exact permutations, cyclic translations, smooth maps


class CellPermutation:
    """Measure-preserving bijection of the Y cells of a grid.

    perm[i] is the image cell of cell i (flat indexing, row-major on
    (n1, n2)).  Acts on fields exactly by sample permutation and on
    points by moving the containing cell while preserving the offset.
    """

    def __init__(self, grid: TorusGrid, perm):
        self.grid = grid
        p = np.asarray(perm, dtype=np.int64)
        n = grid.n_y_cells
        if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
            raise InvalidFieldError("perm is not a bijection of the grid cells")
        self.perm = p
        self._inv = None

    @classmethod
    def identity(cls, grid):
        return cls(grid, np.arange(grid.n_y_cells))

    @classmethod
    def from_mapping(cls, grid, sources, targets):
        """Permutation sending sources[i] -> targets[i]; the remaining
        cells are paired off in sorted order."""
        n = grid.n_y_cells
        src = np.asarray(sources, dtype=np.int64)
        dst = np.asarray(targets, dtype=np.int64)
        if src.size != dst.size:
            raise InvalidFieldError("source/target lists differ in length")
        perm = np.full(n, -1, dtype=np.int64)
        perm[src] = dst
        rest_src = np.setdiff1d(np.arange(n), src, assume_unique=False)
        rest_dst = np.setdiff1d(np.arange(n), dst, assume_unique=False)
        perm[rest_src] = rest_dst
        return cls(grid, perm)

    @property
    def inverse_perm(self):
        if self._inv is None:
            self._inv = np.argsort(self.perm)
        return self._inv

    def inverse(self):
        return CellPermutation(self.grid, self.inverse_perm)

    def compose(self, other: "CellPermutation"):
        """self after other."""
        return CellPermutation(self.grid, self.perm[other.perm])

    def is_identity(self):
        return bool(np.array_equal(self.perm, np.arange(self.perm.size)))

    def apply_cells(self, cells):
        return self.perm[np.asarray(cells, dtype=np.int64)]

    def apply_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        idx = self.grid.y_cell_index(pts)
        centers = self.grid.y_cell_center(idx)
        offset = pts - centers
        return wrap01(self.grid.y_cell_center(self.perm[idx]) + offset)

    def apply_inverse_points(self, pts):
        pts = np.asarray(pts, dtype=float)
        idx = self.grid.y_cell_index(pts)
        centers = self.grid.y_cell_center(idx)
        offset = pts - centers
        return wrap01(self.grid.y_cell_center(self.inverse_perm[idx]) + offset)

    def pushforward_field(self, f: ScalarField) -> ScalarField:
        """H o g^{-1}: the field carried along by the map."""
        flat = f.samples.reshape(-1)[self.inverse_perm]
        return f.with_samples(flat.reshape(f.samples.shape))

    def pullback_field(self, f: ScalarField) -> ScalarField:
        flat = f.samples.reshape(-1)[self.perm]
        return f.with_samples(flat.reshape(f.samples.shape))


class TorusTranslation:
    """Cyclic cell translation of the Y grid; O(1) storage.

    Semantically a CellPermutation, but field action is a roll and
    composition stays closed, which keeps large translate families cheap.
    """

    def __init__(self, grid: TorusGrid, shift):
        self.grid = grid
        n1, n2 = grid.res_y
        self.shift = (int(shift[0]) % n1, int(shift[1]) % n2)

    def inverse(self):
        return TorusTranslation(self.grid, (-self.shift[0], -self.shift[1]))

    def compose(self, other):
        if isinstance(other, TorusTranslation):
            return TorusTranslation(
                self.grid,
                (self.shift[0] + other.shift[0], self.shift[1] + other.shift[1]),
            )
        return self.to_permutation().compose(other)

    def is_identity(self):
        return self.shift == (0, 0)

    def to_permutation(self):
        n1, n2 = self.grid.res_y
        i, j = np.divmod(np.arange(self.grid.n_y_cells), n2)
        return CellPermutation(
            self.grid, ((i + self.shift[0]) % n1) * n2 + (j + self.shift[1]) % n2
        )

    def apply_cells(self, cells):
        n1, n2 = self.grid.res_y
        cells = np.asarray(cells, dtype=np.int64)
        i, j = np.divmod(cells, n2)
        return ((i + self.shift[0]) % n1) * n2 + (j + self.shift[1]) % n2

    def _vector(self):
        n1, n2 = self.grid.res_y
        return np.array([self.shift[0] / n1, self.shift[1] / n2])

    def apply_points(self, pts):
        return wrap01(np.asarray(pts, dtype=float) + self._vector())

    def apply_inverse_points(self, pts):
        return wrap01(np.asarray(pts, dtype=float) - self._vector())

    def pushforward_field(self, f: ScalarField) -> ScalarField:
        return f.with_samples(np.roll(f.samples, self.shift, axis=(-2, -1)))

    def pullback_field(self, f: ScalarField) -> ScalarField:
        return f.with_samples(
            np.roll(f.samples, (-self.shift[0], -self.shift[1]), axis=(-2, -1))
        )


class SmoothMap:
    """Pointwise torus map with a declared inverse.

    Measure preservation is checked numerically (Jacobian determinant at
    the grid samples) rather than assumed; `measure_defect` reports the
    worst deviation of |det DJ| from 1.
    """

    def __init__(self, grid: TorusGrid, fwd: Callable, inv: Callable):
        self.grid = grid
        self.fwd = fwd
        self.inv = inv

    def apply_points(self, pts):
        return wrap01(self.fwd(np.asarray(pts, dtype=float)))

    def apply_inverse_points(self, pts):
        return wrap01(self.inv(np.asarray(pts, dtype=float)))

    def pushforward_field(self, f: ScalarField) -> ScalarField:
        mesh = self.grid.y_mesh()
        return f.with_samples(f.evaluate(self.apply_inverse_points(mesh)))

    def pullback_field(self, f: ScalarField) -> ScalarField:
        mesh = self.grid.y_mesh()
        return f.with_samples(f.evaluate(self.apply_points(mesh)))

    def measure_defect(self, step=1e-6):
        """max |det(D fwd) - 1| over grid samples, by central differences."""
        mesh = self.grid.y_mesh().reshape(-1, 2)
        jac = np.empty((mesh.shape[0], 2, 2))
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = step
            hi = self.fwd(mesh + e)
            lo = self.fwd(mesh - e)
            diff = hi - lo
            # unwrap across the periodic seam
            diff = diff - np.rint(diff)
            jac[:, :, axis] = diff / (2.0 * step)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        return float(np.abs(det - 1.0).max())
