"""Grid, field, closed-form, and cell-map behavior.

Expected values here come from independent routes: dense sampling for
sups, quadrature limits for integrals, and hand algebra for the trig
identities.  The closed-form path is always cross-checked against the
sampled path it is allowed to replace.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergoloop.errors import InvalidFieldError
from ergoloop.phase import (
    GOLDEN,
    SQRT2M1,
    CellPermutation,
    CircleCoord,
    ScalarField,
    SmoothMap,
    TorusGrid,
    TorusTranslation,
    TrigPoly,
    add_fields,
    field_mean,
    fiber_sup_profile,
    normalize_zero_mean,
    scale_field,
    sup_norm,
    time_sup_integral,
    wrap01,
)


def grid(res_t=8, n1=8, n2=8):
    return TorusGrid(res_t, (n1, n2))


class TestCircle:
    def test_canonical_range(self):
        assert CircleCoord(1.25).value == 0.25
        assert CircleCoord(-0.25).value == 0.75
        assert CircleCoord(1.0).value == 0.0

    def test_seam_rounding(self):
        # a float just below an integer must not canonicalize to 1.0
        eps = -1e-18
        assert wrap01(eps) == 0.0
        assert 0.0 <= CircleCoord(eps).value < 1.0

    def test_arithmetic(self):
        c = CircleCoord(0.75) + 0.5
        assert c.value == pytest.approx(0.25)
        assert (CircleCoord(0.1) - 0.2).value == pytest.approx(0.9)
        assert CircleCoord(0.9).distance(0.05) == pytest.approx(0.15)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_addition_commutes_with_wrapping(self, a, b):
        lhs = (CircleCoord(a) + b).value
        rhs = wrap01(a + b)
        assert abs(lhs - rhs) < 1e-9 or abs(abs(lhs - rhs) - 1.0) < 1e-9


class TestGrid:
    def test_resolution_floor(self):
        with pytest.raises(InvalidFieldError):
            TorusGrid(1, (8, 8))
        with pytest.raises(InvalidFieldError):
            TorusGrid(8, (8, 1))

    def test_cell_measure(self):
        assert grid(4, 8, 16).cell_measure == pytest.approx(1.0 / 128)

    def test_cell_roundtrip(self):
        g = grid()
        mesh = g.y_mesh().reshape(-1, 2)
        idx = g.y_cell_index(mesh)
        assert np.array_equal(idx, np.arange(g.n_y_cells))
        np.testing.assert_allclose(g.y_cell_center(idx), mesh)


class TestTrigPoly:
    def test_cosine_evaluation_matches_formula(self):
        p = TrigPoly.cosine(2, (1, 0))
        pts = np.random.default_rng(0).random((50, 2))
        np.testing.assert_allclose(p(pts), np.cos(2 * np.pi * pts[:, 0]), atol=1e-14)

    def test_sine_evaluation(self):
        p = TrigPoly.sine(3, (0, 0, 2))
        pts = np.random.default_rng(1).random((50, 3))
        np.testing.assert_allclose(
            p(pts), np.sin(4 * np.pi * pts[:, 2]), atol=1e-14
        )

    def test_product_identity(self):
        # cos(a)cos(b) = (cos(a+b) + cos(a-b)) / 2, checked pointwise
        a = TrigPoly.cosine(2, (1, 0))
        b = TrigPoly.cosine(2, (0, 1))
        prod = a * b
        pts = np.random.default_rng(2).random((100, 2))
        expect = np.cos(2 * np.pi * pts[:, 0]) * np.cos(2 * np.pi * pts[:, 1])
        np.testing.assert_allclose(prod(pts), expect, atol=1e-14)
        assert prod.n_terms == 2

    def test_square_produces_constant(self):
        a = TrigPoly.cosine(2, (1, 0))
        sq = a * a
        assert sq.mean() == pytest.approx(0.5)
        pts = np.random.default_rng(3).random((20, 2))
        np.testing.assert_allclose(
            sq(pts), np.cos(2 * np.pi * pts[:, 0]) ** 2, atol=1e-14
        )

    def test_compose_affine(self):
        # pull cos(2 pi y2) back along (t, y1, y2) -> (t+a, y1+t, y2+b)
        p = TrigPoly.cosine(3, (0, 0, 1))
        lin = np.array([[1, 0, 0], [1, 1, 0], [0, 0, 1]])
        off = np.array([GOLDEN, 0.0, SQRT2M1])
        q = p.compose_affine(lin, off)
        pts = np.random.default_rng(4).random((50, 3))
        np.testing.assert_allclose(
            q(pts), np.cos(2 * np.pi * (pts[:, 2] + SQRT2M1)), atol=1e-13
        )

    def test_derivative(self):
        p = TrigPoly.cosine(2, (3, 0))
        d = p.derivative(0)
        pts = np.random.default_rng(5).random((50, 2))
        np.testing.assert_allclose(
            d(pts), -6 * np.pi * np.sin(6 * np.pi * pts[:, 0]), atol=1e-12
        )

    def test_sup_abs_exact_single_harmonic(self):
        p = TrigPoly.cosine(2, (2, 1), amplitude=0.7) + 0.2
        assert p.sup_abs_exact() == pytest.approx(0.9)
        # dense-grid oracle: sup over a fine lattice approaches it from below
        yy = np.stack(
            np.meshgrid(np.arange(512) / 512, np.arange(512) / 512, indexing="ij"),
            axis=-1,
        )
        dense = np.abs(p(yy)).max()
        assert dense <= 0.9 + 1e-12
        assert dense > 0.9 - 1e-3

    def test_sup_abs_exact_unavailable_for_two_harmonics(self):
        p = TrigPoly.cosine(2, (1, 0)) + TrigPoly.cosine(2, (0, 1))
        assert p.sup_abs_exact() is None

    def test_fiber_profile_matches_dense_sampling(self):
        # F(t,y) = sin(2 pi t) cos(2 pi y1): fiber sup is |sin(2 pi t)|
        p = TrigPoly.sine(3, (1, 0, 0)) * TrigPoly.cosine(3, (0, 1, 0))
        t = np.arange(16) / 16
        prof = p.fiber_sup_profile(t)
        np.testing.assert_allclose(prof, np.abs(np.sin(2 * np.pi * t)), atol=1e-14)

    def test_fiber_profile_none_for_mixed_frequencies(self):
        p = TrigPoly.cosine(3, (0, 1, 0)) + TrigPoly.cosine(3, (0, 0, 1))
        assert p.fiber_sup_profile(np.arange(4) / 4) is None


class TestScalarField:
    def test_mean_of_harmonic_vanishes_exactly(self):
        # even grid sums roots of unity
        g = grid()
        f = ScalarField.from_closed_form(g, TrigPoly.cosine(2, (1, 0)), "Y")
        assert field_mean(f) == pytest.approx(0.0, abs=1e-15)

    def test_sup_norm_hits_grid_extremum(self):
        g = grid()
        f = ScalarField.from_closed_form(g, TrigPoly.cosine(2, (1, 0)), "Y")
        assert sup_norm(f) == 1.0

    def test_normalize_zero_mean(self):
        g = grid()
        f = ScalarField.from_function(g, lambda m: m[..., 0] * 0 + 3.5, "Y")
        nf = normalize_zero_mean(f)
        assert field_mean(nf) == pytest.approx(0.0, abs=1e-15)
        assert sup_norm(nf) == pytest.approx(0.0, abs=1e-15)

    def test_time_sup_integral_quadrature(self):
        # oracle: integral of |sin(2 pi t)| is 2/pi; rectangle-rule budget 2/res_t
        for res_t in (16, 64, 256):
            g = TorusGrid(res_t, (8, 8))
            poly = TrigPoly.sine(3, (1, 0, 0)) * TrigPoly.cosine(3, (0, 1, 0))
            f = ScalarField.from_closed_form(g, poly, "S1xY")
            val = time_sup_integral(f)
            assert abs(val - 2.0 / math.pi) <= 2.0 / res_t

    def test_fiber_profile_sampled_fallback(self):
        g = grid()
        f = ScalarField.from_function(
            g, lambda m: np.sin(2 * np.pi * m[..., 0]) * np.cos(2 * np.pi * m[..., 1]), "S1xY"
        )
        prof = fiber_sup_profile(f)
        assert prof.shape == (g.res_t,)
        # sample max never exceeds the true sup
        assert np.all(prof <= np.abs(np.sin(2 * np.pi * g.t_values)) + 1e-12)

    def test_closed_form_evaluation_is_exact_off_grid(self):
        g = grid()
        poly = TrigPoly.cosine(2, (0, 1))
        f = ScalarField.from_closed_form(g, poly, "Y")
        pts = np.random.default_rng(6).random((40, 2))
        np.testing.assert_allclose(
            f.evaluate(pts), np.cos(2 * np.pi * pts[:, 1]), atol=1e-14
        )

    def test_interpolation_fallback_converges(self):
        fine = TorusGrid(4, (128, 128))
        f = ScalarField.from_function(
            fine, lambda m: np.cos(2 * np.pi * m[..., 0]), "Y"
        )
        pts = np.random.default_rng(7).random((100, 2))
        err = np.abs(f.evaluate(pts) - np.cos(2 * np.pi * pts[:, 0])).max()
        assert err < 2e-3  # O(h^2) for h = 1/128

    @given(st.integers(0, 10 ** 6))
    @settings(max_examples=25, deadline=None)
    def test_norm_properties(self, seed):
        g = TorusGrid(4, (8, 8))
        rng = np.random.default_rng(seed)
        a = ScalarField(g, rng.standard_normal(g.res_y), "Y")
        b = ScalarField(g, rng.standard_normal(g.res_y), "Y")
        s = float(rng.uniform(-3, 3))
        assert sup_norm(add_fields(a, b)) <= sup_norm(a) + sup_norm(b) + 1e-12
        assert sup_norm(scale_field(a, s)) == pytest.approx(abs(s) * sup_norm(a))
        assert field_mean(normalize_zero_mean(a)) == pytest.approx(0.0, abs=1e-12)


class TestCellMaps:
    def test_permutation_roundtrip(self):
        g = grid()
        rng = np.random.default_rng(8)
        perm = CellPermutation(g, rng.permutation(g.n_y_cells))
        f = ScalarField(g, rng.standard_normal(g.res_y), "Y")
        back = perm.pullback_field(perm.pushforward_field(f))
        np.testing.assert_array_equal(back.samples, f.samples)
        assert perm.compose(perm.inverse()).is_identity()

    def test_from_mapping_sends_sources_to_targets(self):
        g = grid()
        src = np.array([3, 17, 40])
        dst = np.array([5, 3, 60])
        perm = CellPermutation.from_mapping(g, src, dst)
        assert np.array_equal(perm.apply_cells(src), dst)

    def test_translation_agrees_with_permutation(self):
        g = grid()
        tr = TorusTranslation(g, (3, 5))
        perm = tr.to_permutation()
        rng = np.random.default_rng(9)
        f = ScalarField(g, rng.standard_normal(g.res_y), "Y")
        np.testing.assert_array_equal(
            tr.pushforward_field(f).samples, perm.pushforward_field(f).samples
        )
        cells = rng.integers(0, g.n_y_cells, size=20)
        assert np.array_equal(tr.apply_cells(cells), perm.apply_cells(cells))

    def test_translation_point_action(self):
        g = grid()
        tr = TorusTranslation(g, (2, 0))
        pts = np.array([[0.5, 0.25]])
        np.testing.assert_allclose(tr.apply_points(pts), [[0.75, 0.25]])
        np.testing.assert_allclose(
            tr.apply_inverse_points(tr.apply_points(pts)), pts
        )

    @given(st.integers(0, 7), st.integers(0, 7), st.integers(0, 7), st.integers(0, 7))
    @settings(max_examples=20, deadline=None)
    def test_translation_group_law(self, a1, a2, b1, b2):
        g = grid()
        u = TorusTranslation(g, (a1, a2))
        v = TorusTranslation(g, (b1, b2))
        w = u.compose(v)
        assert w.shift == ((a1 + b1) % 8, (a2 + b2) % 8)

    def test_smooth_translation_preserves_measure(self):
        g = grid()
        vec = np.array([GOLDEN, SQRT2M1])
        m = SmoothMap(g, lambda p: p + vec, lambda p: p - vec)
        assert m.measure_defect() < 1e-8

    def test_smooth_shear_preserves_measure(self):
        g = grid()
        def fwd(p):
            out = p.copy()
            out[..., 1] = p[..., 1] + 0.3 * np.sin(2 * np.pi * p[..., 0])
            return out
        def inv(p):
            out = p.copy()
            out[..., 1] = p[..., 1] - 0.3 * np.sin(2 * np.pi * p[..., 0])
            return out
        assert SmoothMap(g, fwd, inv).measure_defect() < 1e-7

    def test_smooth_dilation_fails_measure_check(self):
        g = grid()
        def fwd(p):
            return p * np.array([1.1, 1.0])
        def inv(p):
            return p / np.array([1.1, 1.0])
        assert SmoothMap(g, fwd, inv).measure_defect() > 0.05
