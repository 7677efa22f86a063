"""Normalized Hamiltonians, their flows, and the loop calculus.

Loops of area-preserving torus maps are generated by Hamiltonians whose
fiber integrals vanish.  Composition and inversion follow the generator
rules K = H2 + H1 o h2(t)^{-1} and K = -H o h(t); Hofer length is the
time integral of the fiber sup.

Numerics: flows use classical fourth-order Runge-Kutta with a fixed
step.  Catalog loops (shears of one fiber coordinate) carry analytic
flow maps, so compositions and inversions of catalog entries stay exact
at the sample points; generic sampled Hamiltonians fall back to grid
interpolation and say so in their tolerances.
"""

from __future__ import annotations

import math

import numpy as np

from .dynamics import (
    HamiltonianLoop,
    LinearTranslationLoop,
    SkewProduct,
    birkhoff_field_sum,
)
from .errors import InvalidFieldError
from .phase import (
    ScalarField,
    TorusGrid,
    TrigPoly,
    sup_norm,
    time_sup_integral,
    wrap01,
)

DEFAULT_STEP_COUNT = 256
TWO_PI = 2.0 * math.pi

_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])  # gradient -> Hamiltonian field


class NormalizedHamiltonian:
    """Scalar generator on S1 x Y with zero integral over every fiber.

    `analytic_loop` (when present) is the exact flow loop; `velocity_fn`
    overrides the gradient-based vector field, used by compositions to
    keep an exact generator after the closed form is lost.
    """

    def __init__(self, field: ScalarField, analytic_loop=None, velocity_fn=None,
                 fiber_mean_defect=0.0):
        if field.domain != "S1xY":
            raise InvalidFieldError("Hamiltonians live on S1 x Y")
        if not np.all(np.isfinite(field.samples)):
            raise InvalidFieldError("invalid Hamiltonian")
        means = field.samples.mean(axis=(1, 2))
        if np.abs(means).max() > 1e-12:
            raise InvalidFieldError(
                f"fiber means reach {np.abs(means).max():.3e}; normalize first"
            )
        self.field = field
        self.analytic_loop = analytic_loop
        self.velocity_fn = velocity_fn
        self.fiber_mean_defect = float(fiber_mean_defect)
        self._grad = None

    @property
    def grid(self) -> TorusGrid:
        return self.field.grid

    @property
    def poly(self) -> TrigPoly | None:
        return self.field.closed_form

    def is_zero(self):
        return sup_norm(self.field) == 0.0

    def _grad_polys(self):
        if self._grad is None:
            if self.poly is None:
                raise InvalidFieldError(
                    "flow needs an analytic gradient: closed form or velocity_fn"
                )
            self._grad = (self.poly.derivative(1), self.poly.derivative(2))
        return self._grad

    def velocity(self, s, y_pts):
        """X_H(s, y) = (dH/dy2, -dH/dy1) at scalar time s."""
        y_pts = np.asarray(y_pts, dtype=float)
        if self.velocity_fn is not None:
            return self.velocity_fn(s, y_pts)
        d1, d2 = self._grad_polys()
        pts = np.empty(y_pts.shape[:-1] + (3,))
        pts[..., 0] = s
        pts[..., 1:] = y_pts
        out = np.empty_like(y_pts)
        out[..., 0] = d2(pts)
        out[..., 1] = -d1(pts)
        return out

    def can_flow(self):
        return self.velocity_fn is not None or self.poly is not None


def zero_hamiltonian(grid: TorusGrid) -> NormalizedHamiltonian:
    return NormalizedHamiltonian(
        ScalarField.from_closed_form(grid, TrigPoly.constant(3, 0.0), "S1xY")
    )


# ---------------------------------------------------------------------------
# RK4 integration


def _rk4_step(vel, s, y, h):
    k1 = vel(s, y)
    k2 = vel(s + h / 2, y + (h / 2) * k1)
    k3 = vel(s + h / 2, y + (h / 2) * k2)
    k4 = vel(s + h, y + h * k3)
    return y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(H: NormalizedHamiltonian, y_pts, s0, s1, step_count):
    """Integrate X_H from s0 to s1: fixed steps 1/step_count, one partial
    final step to land exactly on s1."""
    if not H.can_flow():
        raise InvalidFieldError(
            "flow needs an analytic gradient: closed form or velocity_fn"
        )
    total = s1 - s0
    if total == 0.0:
        return np.array(y_pts, dtype=float, copy=True)
    sign = 1.0 if total > 0 else -1.0
    span = abs(total)
    ds = 1.0 / step_count
    n_full = int(math.floor(span * step_count + 1e-12))
    rem = span - n_full * ds
    y = np.array(y_pts, dtype=float, copy=True)
    s = s0
    vel = H.velocity
    for _ in range(n_full):
        y = _rk4_step(vel, s, y, sign * ds)
        s += sign * ds
    if rem > 1e-15:
        y = _rk4_step(vel, s, y, sign * rem)
    if not np.all(np.isfinite(y)):
        raise InvalidFieldError("invalid Hamiltonian")
    return y


class FlowMap:
    """The time-t map of a normalized Hamiltonian, integrated on demand."""

    def __init__(self, H: NormalizedHamiltonian, t, step_count=DEFAULT_STEP_COUNT):
        self.H = H
        self.t = float(t)
        self.step_count = int(step_count)

    def apply_points(self, pts):
        return wrap01(_integrate(self.H, pts, 0.0, self.t, self.step_count))

    def apply_inverse_points(self, pts):
        return wrap01(_integrate(self.H, pts, self.t, 0.0, self.step_count))


def flow_of_hamiltonian(H: NormalizedHamiltonian, t, step_count=DEFAULT_STEP_COUNT):
    """Map y(0) -> y(t) for dy/ds = X_H(s, y), fourth-order Runge-Kutta."""
    return FlowMap(H, float(t), step_count)


class FlowBackedLoop(HamiltonianLoop):
    """Loop realized by numerical flow; maps integrate points on demand."""

    homotopy_tag = "flow-backed"

    def __init__(self, H: NormalizedHamiltonian, step_count=DEFAULT_STEP_COUNT):
        self.generator = H
        self.step_count = int(step_count)

    def map_at(self, t):
        return FlowMap(self.generator, float(t), self.step_count)


class LoopFlow:
    """Flow maps of H at every grid time, batched over one integration sweep.

    All fiber grid points advance together; the copy bound for time t_j
    freezes once the running time passes t_j.  Requires the step count to
    be a multiple of res_t so freeze times sit on step boundaries.
    """

    def __init__(self, H: NormalizedHamiltonian, step_count=DEFAULT_STEP_COUNT,
                 grid: TorusGrid | None = None):
        self.H = H
        self.grid = grid or H.grid
        self.step_count = int(step_count)
        if self.step_count % self.grid.res_t != 0:
            raise InvalidFieldError("step_count must be a multiple of res_t")
        self._fwd = None
        self._inv = None

    def _mesh_states(self):
        grid = self.grid
        mesh = grid.y_mesh()  # (n1, n2, 2)
        return np.broadcast_to(mesh, (grid.res_t,) + mesh.shape).copy()

    def _sweep(self, backward=False):
        res_t = self.grid.res_t
        sc = self.step_count
        ds = 1.0 / sc
        states = self._mesh_states()
        vel = self.H.velocity
        ks = range(sc - 1, -1, -1) if backward else range(sc)
        for k in ks:
            j_min = -(-((k + 1) * res_t) // sc)  # ceil
            if j_min >= res_t:
                continue
            if backward:
                states[j_min:] = _rk4_step(vel, (k + 1) * ds, states[j_min:], -ds)
            else:
                states[j_min:] = _rk4_step(vel, k * ds, states[j_min:], ds)
        return wrap01(states)

    def forward_mesh(self):
        """h(t_j) applied to the fiber mesh, shape (res_t, n1, n2, 2)."""
        if self._fwd is None:
            self._fwd = self._sweep(backward=False)
        return self._fwd

    def inverse_mesh(self):
        """h(t_j)^{-1} applied to the fiber mesh."""
        if self._inv is None:
            self._inv = self._sweep(backward=True)
        return self._inv

    def closure_defect(self):
        """max distance of h(1) from the identity over the fiber mesh."""
        mesh = self.grid.y_mesh()
        img = wrap01(_integrate(self.H, mesh, 0.0, 1.0, self.step_count))
        d = np.abs(img - mesh)
        return float(np.minimum(d, 1.0 - d).max())


# ---------------------------------------------------------------------------
# Catalog loops and Hamiltonians


def ramp_profile(t):
    """s(t) = sin^2(pi t): s(0) = s(1) = 0, so reparametrized paths close."""
    t = np.asarray(t, dtype=float)
    return np.sin(np.pi * t) ** 2


class ShearLoop(HamiltonianLoop):
    """h_t shifts one fiber coordinate by a profile of the other, exactly.

    axis 0: y2 += amp * 2 pi * sin(2 pi y1) * s(t)
    axis 1: y1 -= amp * 2 pi * sin(2 pi y2) * s(t)
    These are the flows of amp * s'(t) cos(2 pi y_axis).
    """

    homotopy_tag = "shear (contractible)"

    def __init__(self, axis, amplitude, profile=ramp_profile):
        if axis not in (0, 1):
            raise InvalidFieldError("axis must be 0 or 1")
        self.axis = int(axis)
        self.amplitude = float(amplitude)
        self.profile = profile
        self.shifted = 1 - self.axis
        self.sign = 1.0 if self.axis == 0 else -1.0

    def _phi(self, t, y_axis_vals):
        return (
            self.sign
            * self.amplitude
            * TWO_PI
            * np.sin(TWO_PI * y_axis_vals)
            * self.profile(t)
        )

    def _dphi(self, t, y_axis_vals):
        return (
            self.sign
            * self.amplitude
            * (TWO_PI ** 2)
            * np.cos(TWO_PI * y_axis_vals)
            * self.profile(t)
        )

    def shift_points(self, t, pts, direction=1.0):
        pts = np.asarray(pts, dtype=float)
        out = pts.copy()
        out[..., self.shifted] = wrap01(
            pts[..., self.shifted] + direction * self._phi(t, pts[..., self.axis])
        )
        return out

    def map_at(self, t):
        loop, t = self, float(t)

        class _Shear:
            def apply_points(self, pts):
                return loop.shift_points(t, pts, 1.0)

            def apply_inverse_points(self, pts):
                return loop.shift_points(t, pts, -1.0)

        return _Shear()

    def batch_points(self, t_values, states, direction=1.0):
        """Apply h_t (or its inverse) with t varying along the leading axis."""
        t_values = np.asarray(t_values, dtype=float).reshape(-1, 1, 1)
        out = np.array(states, dtype=float, copy=True)
        out[..., self.shifted] = wrap01(
            states[..., self.shifted]
            + direction * self._phi(t_values, states[..., self.axis])
        )
        return out

    def inverse_chain_data(self, s, y_pts):
        """g = h_s^{-1} and the slope of its shift, for gradient chain rules."""
        y_pts = np.asarray(y_pts, dtype=float)
        g = y_pts.copy()
        g[..., self.shifted] = y_pts[..., self.shifted] - self._phi(
            s, y_pts[..., self.axis]
        )
        dpsi = -self._dphi(s, y_pts[..., self.axis])
        return g, self.shifted, self.axis, dpsi

    def inverse(self):
        return ShearLoop(self.axis, -self.amplitude, self.profile)


class ComposedAnalyticLoop(HamiltonianLoop):
    """Pointwise-in-t composition h2(t) o h1(t) of two exact loops."""

    homotopy_tag = "composite"

    def __init__(self, outer: HamiltonianLoop, inner: HamiltonianLoop):
        self.outer = outer
        self.inner = inner

    def map_at(self, t):
        m2 = self.outer.map_at(t)
        m1 = self.inner.map_at(t)

        class _Composite:
            def apply_points(self, pts):
                return m2.apply_points(m1.apply_points(pts))

            def apply_inverse_points(self, pts):
                return m1.apply_inverse_points(m2.apply_inverse_points(pts))

        return _Composite()


class InvertedAnalyticLoop(HamiltonianLoop):
    """t -> h(t)^{-1} of an exact loop."""

    homotopy_tag = "inverted"

    def __init__(self, base: HamiltonianLoop):
        self.base = base

    def map_at(self, t):
        m = self.base.map_at(t)

        class _Inv:
            def apply_points(self, pts):
                return m.apply_inverse_points(pts)

            def apply_inverse_points(self, pts):
                return m.apply_points(pts)

        return _Inv()


def shear_hamiltonian(grid: TorusGrid, axis=0, amplitude=1.0) -> NormalizedHamiltonian:
    """amp * s'(t) cos(2 pi y_axis) with s = sin^2(pi t); exact shear loop."""
    freq = (0, 1, 0) if axis == 0 else (0, 0, 1)
    poly = TrigPoly.sine(3, (1, 0, 0), math.pi * amplitude) * TrigPoly.cosine(3, freq)
    field = ScalarField.from_closed_form(grid, poly, "S1xY")
    return NormalizedHamiltonian(field, analytic_loop=ShearLoop(axis, amplitude))


def _asymmetric_ramp_rate() -> TrigPoly:
    """d/dt of s(t) = sin^2(pi t)(1 + sin(2 pi t)/2), as a poly in t.

    s(0) = s(1) = 0 closes the loop, but s is not palindromic: the flow
    does not retrace itself, so step-halving exposes the clean
    fourth-order error instead of a symmetric cancellation.
    """
    return (
        TrigPoly.sine(3, (1, 0, 0), math.pi)
        + TrigPoly.cosine(3, (1, 0, 0), math.pi / 2)
        - TrigPoly.cosine(3, (2, 0, 0), math.pi / 2)
    )


def coupled_hamiltonian(grid: TorusGrid, amplitude=0.1) -> NormalizedHamiltonian:
    """amp * s'(t) cos(2 pi y1) cos(2 pi y2): no closed flow, RK4 only.

    The default amplitude keeps coarse-step RK4 inside its asymptotic
    regime, which the step-halving order check relies on.
    """
    poly = (
        _asymmetric_ramp_rate().scale(amplitude)
        * TrigPoly.cosine(3, (0, 1, 0))
        * TrigPoly.cosine(3, (0, 0, 1))
    )
    field = ScalarField.from_closed_form(grid, poly, "S1xY")
    return NormalizedHamiltonian(field)


def autonomous_shear(grid: TorusGrid, amplitude=1.0) -> NormalizedHamiltonian:
    """amp * cos(2 pi y1): a path, not a loop (no closure at t = 1)."""
    poly = TrigPoly.cosine(3, (0, 1, 0), amplitude)
    field = ScalarField.from_closed_form(grid, poly, "S1xY")
    return NormalizedHamiltonian(field)


def cosine_shear_hamiltonian(grid: TorusGrid, amplitude=1.0) -> NormalizedHamiltonian:
    """amp * cos(2 pi t) cos(2 pi y1), the shear loop with s(t) = sin(2 pi t)/2 pi.

    Unlike the sin^2 ramp, the t = 0 slice is a full cosine; geodesic
    breaking needs that slice to be non-constant.
    """
    poly = TrigPoly.cosine(3, (1, 0, 0), amplitude) * TrigPoly.cosine(3, (0, 1, 0))
    field = ScalarField.from_closed_form(grid, poly, "S1xY")

    def s_profile(t):
        return np.sin(TWO_PI * np.asarray(t, dtype=float)) / TWO_PI

    return NormalizedHamiltonian(
        field, analytic_loop=ShearLoop(0, amplitude, profile=s_profile)
    )


def catalog_pair(grid: TorusGrid):
    """The non-commuting shear pair used by composition cross-checks."""
    return shear_hamiltonian(grid, 0, 0.3), shear_hamiltonian(grid, 1, 0.2)


# ---------------------------------------------------------------------------
# Length


def loop_length(H: NormalizedHamiltonian) -> float:
    """integral over t of max_y |H(t, y)|."""
    return time_sup_integral(H.field)


# ---------------------------------------------------------------------------
# Composition and inversion


def _recenter(samples):
    means = samples.mean(axis=(1, 2))
    defect = float(np.abs(means).max())
    return samples - means[:, None, None], defect

_DRIFT_TOL = 1e-10


def _loop_of(H: NormalizedHamiltonian, step_count):
    return H.analytic_loop or FlowBackedLoop(H, step_count)


def _inverse_mesh_images(H2, loop2, grid, step_count):
    if isinstance(loop2, ShearLoop):
        states = np.broadcast_to(grid.y_mesh(), (grid.res_t,) + grid.y_mesh().shape)
        return loop2.batch_points(grid.t_values, states, direction=-1.0)
    if isinstance(loop2, FlowBackedLoop):
        return LoopFlow(loop2.generator, loop2.step_count, grid).inverse_mesh()
    out = np.empty((grid.res_t, *grid.res_y, 2))
    mesh = grid.y_mesh()
    for j, t in enumerate(grid.t_values):
        out[j] = loop2.map_at(t).apply_inverse_points(mesh)
    return out


def compose_loops(
    H2: NormalizedHamiltonian, H1: NormalizedHamiltonian,
    step_count=DEFAULT_STEP_COUNT,
) -> NormalizedHamiltonian:
    """Generator of the composite loop: H2(t, y) + H1(t, h2(t)^{-1} y)."""
    if H2.grid is not H1.grid and (
        H2.grid.res_t != H1.grid.res_t or H2.grid.res_y != H1.grid.res_y
    ):
        raise InvalidFieldError("grids differ")
    if H1.is_zero():
        return H2
    if H2.is_zero():
        return H1
    grid = H2.grid
    loop2 = _loop_of(H2, step_count)
    g_all = _inverse_mesh_images(H2, loop2, grid, step_count)
    pts = np.empty((grid.res_t, *grid.res_y, 3))
    pts[..., 0] = grid.t_values[:, None, None]
    pts[..., 1:] = g_all
    samples = H2.field.samples + H1.field.evaluate(pts)
    samples, defect = _recenter(samples)
    if defect > _DRIFT_TOL:
        raise InvalidFieldError(
            f"fiber means drifted to {defect:.3e} in composition"
        )
    velocity_fn = _compose_velocity(H2, H1, loop2)
    analytic = None
    if H2.analytic_loop is not None and H1.analytic_loop is not None:
        analytic = ComposedAnalyticLoop(H2.analytic_loop, H1.analytic_loop)
    return NormalizedHamiltonian(
        ScalarField(grid, samples, "S1xY"),
        analytic_loop=analytic,
        velocity_fn=velocity_fn,
        fiber_mean_defect=defect,
    )


def _compose_velocity(H2, H1, loop2):
    """Exact vector field of the composite when the chain rule is available:
    X_K = R (grad H2 + Dg^T (grad H1) o g), g = h2(t)^{-1}."""
    if not isinstance(loop2, ShearLoop):
        return None
    if H2.poly is None or not H1.can_flow():
        return None
    d2_1, d2_2 = H2.poly.derivative(1), H2.poly.derivative(2)
    if H1.poly is not None:
        d1_1, d1_2 = H1.poly.derivative(1), H1.poly.derivative(2)
    else:
        return None

    def velocity(s, y_pts):
        y_pts = np.asarray(y_pts, dtype=float)
        pts = np.empty(y_pts.shape[:-1] + (3,))
        pts[..., 0] = s
        pts[..., 1:] = y_pts
        grad = np.empty_like(y_pts)
        grad[..., 0] = d2_1(pts)
        grad[..., 1] = d2_2(pts)
        g_pts, shifted, axis, dpsi = loop2.inverse_chain_data(s, y_pts)
        gpts3 = np.empty_like(pts)
        gpts3[..., 0] = s
        gpts3[..., 1:] = g_pts
        w = np.empty_like(y_pts)
        w[..., 0] = d1_1(gpts3)
        w[..., 1] = d1_2(gpts3)
        w[..., axis] += dpsi * w[..., shifted]
        grad += w
        out = np.empty_like(grad)
        out[..., 0] = grad[..., 1]
        out[..., 1] = -grad[..., 0]
        return out

    return velocity


def _shear_invariant(poly: TrigPoly, loop: ShearLoop):
    """True when the closed form ignores the coordinate the shear moves."""
    idx = loop.shifted + 1
    return all(k[idx] == 0 for k in poly.terms)


def invert_loop(
    H: NormalizedHamiltonian, loop: HamiltonianLoop | None = None,
    step_count=DEFAULT_STEP_COUNT,
) -> NormalizedHamiltonian:
    """Generator of t -> h(t)^{-1}: the field -H(t, h(t) y).

    `loop` defaults to H's own loop; passing another loop reads H against
    that loop instead (used by asymptotic norms, where the skew system
    supplies the loop).
    """
    if H.is_zero():
        return H
    grid = H.grid
    loop = loop or _loop_of(H, step_count)

    if isinstance(loop, LinearTranslationLoop) and H.poly is not None:
        w = loop.rate
        lin = np.array(
            [[1, 0, 0], [int(round(w[0])), 1, 0], [int(round(w[1])), 0, 1]],
            dtype=np.int64,
        )
        off = np.array([0.0, loop.base[0], loop.base[1]])
        poly = H.poly.compose_affine(lin, off).scale(-1.0)
        inv_loop = LinearTranslationLoop(-loop.rate, -loop.base)
        return NormalizedHamiltonian(
            ScalarField.from_closed_form(grid, poly, "S1xY"),
            analytic_loop=inv_loop,
        )

    if isinstance(loop, ShearLoop) and H.poly is not None and _shear_invariant(
        H.poly, loop
    ):
        # the shear moves a coordinate H never reads: -H o h = -H exactly
        poly = H.poly.scale(-1.0)
        return NormalizedHamiltonian(
            ScalarField.from_closed_form(grid, poly, "S1xY"),
            analytic_loop=loop.inverse(),
        )

    if isinstance(loop, ShearLoop):
        mesh = np.broadcast_to(grid.y_mesh(), (grid.res_t, *grid.res_y, 2))
        imgs = loop.batch_points(grid.t_values, mesh, direction=1.0)
    elif isinstance(loop, FlowBackedLoop):
        imgs = LoopFlow(loop.generator, loop.step_count, grid).forward_mesh()
    else:
        imgs = np.empty((grid.res_t, *grid.res_y, 2))
        mesh = grid.y_mesh()
        for j, t in enumerate(grid.t_values):
            imgs[j] = loop.map_at(t).apply_points(mesh)
    pts = np.empty((grid.res_t, *grid.res_y, 3))
    pts[..., 0] = grid.t_values[:, None, None]
    pts[..., 1:] = imgs
    samples, defect = _recenter(-H.field.evaluate(pts))
    if defect > _DRIFT_TOL:
        raise InvalidFieldError(f"fiber means drifted to {defect:.3e} in inversion")
    return NormalizedHamiltonian(
        ScalarField(grid, samples, "S1xY"),
        analytic_loop=InvertedAnalyticLoop(loop),
        fiber_mean_defect=defect,
    )


# ---------------------------------------------------------------------------
# Asymptotic norm


def asymptotic_norm_estimate(H: NormalizedHamiltonian, T: SkewProduct, ks):
    """Upper bounds (1/k) length(F_k), F_k the accumulated generator of the
    k-fold conjugated composite; decreasing trend certifies the limit norm.
    """
    ks = [int(k) for k in ks]
    if any(k < 1 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidFieldError("ks must be increasing positive integers")
    if H.is_zero():
        return np.zeros(len(ks))
    K = invert_loop(H, loop=T.loop)
    out = np.empty(len(ks))
    for i, k in enumerate(ks):
        Fk = birkhoff_field_sum(K.field, T, k)
        out[i] = time_sup_integral(Fk) / k
    return out
