"""Flows, loop calculus, Hofer length, asymptotic norms."""

import math

import numpy as np
import pytest

from ergoloop import GOLDEN, SQRT2M1, CellPermutation, ScalarField, TorusGrid, TrigPoly
from ergoloop.dynamics import SkewProduct, furstenberg_loop
from ergoloop.errors import InvalidFieldError
from ergoloop.hofer import (
    FlowBackedLoop,
    LoopFlow,
    NormalizedHamiltonian,
    ShearLoop,
    asymptotic_norm_estimate,
    autonomous_shear,
    catalog_pair,
    compose_loops,
    coupled_hamiltonian,
    flow_of_hamiltonian,
    invert_loop,
    loop_length,
    ramp_profile,
    shear_hamiltonian,
    zero_hamiltonian,
)
from ergoloop.phase import scale_field, sup_norm

BETA = SQRT2M1


def circle_dist(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b))
    return np.minimum(d, 1.0 - d)


class TestNormalized:
    def test_rejects_non_finite(self):
        grid = TorusGrid(4, (4, 4))
        samples = np.zeros((4, 4, 4))
        samples[1, 2, 3] = np.nan
        with pytest.raises(InvalidFieldError, match="invalid Hamiltonian"):
            NormalizedHamiltonian(ScalarField(grid, samples, "S1xY"))

    def test_rejects_fiber_mean_drift(self):
        grid = TorusGrid(4, (4, 4))
        field = ScalarField.from_closed_form(grid, TrigPoly.constant(3, 0.3), "S1xY")
        with pytest.raises(InvalidFieldError, match="normalize"):
            NormalizedHamiltonian(field)

    def test_zero_element(self):
        grid = TorusGrid(4, (4, 4))
        assert zero_hamiltonian(grid).is_zero()
        assert loop_length(zero_hamiltonian(grid)) == 0.0


class TestFlow:
    def test_zero_hamiltonian_identity(self):
        grid = TorusGrid(4, (4, 4))
        pts = np.random.default_rng(0).random((20, 2))
        out = flow_of_hamiltonian(zero_hamiltonian(grid), 0.7).apply_points(pts)
        np.testing.assert_allclose(out, pts, atol=0)

    def test_time_zero_identity(self):
        grid = TorusGrid(4, (4, 4))
        H = coupled_hamiltonian(grid)
        pts = np.random.default_rng(1).random((20, 2))
        np.testing.assert_allclose(
            flow_of_hamiltonian(H, 0.0).apply_points(pts), pts, atol=0
        )

    def test_autonomous_shear_oracle(self):
        # H = a cos(2 pi y1): y2 advances by t * a * 2 pi sin(2 pi y1)
        grid = TorusGrid(8, (8, 8))
        H = autonomous_shear(grid, 0.5)
        pts = np.random.default_rng(2).random((50, 2))
        out = flow_of_hamiltonian(H, 0.3, step_count=64).apply_points(pts)
        expect_y2 = (pts[:, 1] + 0.3 * 0.5 * 2 * math.pi * np.sin(
            2 * math.pi * pts[:, 0])) % 1.0
        np.testing.assert_allclose(out[:, 0], pts[:, 0], atol=1e-14)
        np.testing.assert_allclose(circle_dist(out[:, 1], expect_y2), 0, atol=1e-12)

    def test_reparametrized_shear_matches_analytic_loop(self):
        grid = TorusGrid(8, (8, 8))
        H = shear_hamiltonian(grid, 0, 0.3)
        pts = np.random.default_rng(3).random((50, 2))
        for t in (0.2, 0.5, 0.9):
            rk = flow_of_hamiltonian(H, t, step_count=256).apply_points(pts)
            ana = H.analytic_loop.map_at(t).apply_points(pts)
            np.testing.assert_allclose(circle_dist(rk, ana), 0, atol=1e-9)

    def test_partial_final_step_lands_on_t(self):
        grid = TorusGrid(8, (8, 8))
        H = autonomous_shear(grid, 0.5)
        pts = np.array([[0.15, 0.4]])
        out = flow_of_hamiltonian(H, 0.33, step_count=10).apply_points(pts)
        expect = (0.4 + 0.33 * 0.5 * 2 * math.pi * math.sin(2 * math.pi * 0.15)) % 1.0
        np.testing.assert_allclose(out[0, 1], expect, atol=1e-12)

    def test_inverse_roundtrip(self):
        grid = TorusGrid(8, (8, 8))
        H = coupled_hamiltonian(grid)
        pts = np.random.default_rng(4).random((50, 2))
        fm = flow_of_hamiltonian(H, 0.7, step_count=512)
        back = fm.apply_inverse_points(fm.apply_points(pts))
        np.testing.assert_allclose(circle_dist(back, pts), 0, atol=1e-8)

    def test_sampled_field_cannot_flow(self):
        grid = TorusGrid(4, (4, 4))
        field = ScalarField(grid, np.zeros((4, 4, 4)), "S1xY")
        H = NormalizedHamiltonian(field)
        with pytest.raises(InvalidFieldError, match="analytic gradient"):
            flow_of_hamiltonian(H, 0.5).apply_points(np.zeros((1, 2)))


class TestLoopFlow:
    def test_step_count_divisibility(self):
        grid = TorusGrid(8, (8, 8))
        with pytest.raises(InvalidFieldError, match="multiple of res_t"):
            LoopFlow(shear_hamiltonian(grid), 100)

    def test_time_zero_map_is_identity(self):
        grid = TorusGrid(8, (8, 8))
        lf = LoopFlow(coupled_hamiltonian(grid), 64)
        np.testing.assert_allclose(lf.forward_mesh()[0], grid.y_mesh(), atol=0)
        np.testing.assert_allclose(lf.inverse_mesh()[0], grid.y_mesh(), atol=0)

    def test_batched_sweep_matches_single_flows(self):
        grid = TorusGrid(8, (8, 8))
        H = coupled_hamiltonian(grid)
        lf = LoopFlow(H, 64)
        fwd = lf.forward_mesh()
        mesh = grid.y_mesh()
        for j in (1, 3, 7):
            t = grid.t_values[j]
            single = flow_of_hamiltonian(H, t, step_count=64).apply_points(mesh)
            np.testing.assert_allclose(circle_dist(fwd[j], single), 0, atol=1e-12)

    def test_inverse_mesh_inverts(self):
        grid = TorusGrid(8, (8, 8))
        H = coupled_hamiltonian(grid)
        lf = LoopFlow(H, 128)
        inv = lf.inverse_mesh()
        mesh = grid.y_mesh()
        for j in (2, 5):
            t = grid.t_values[j]
            round_trip = flow_of_hamiltonian(H, t, step_count=128).apply_points(inv[j])
            np.testing.assert_allclose(circle_dist(round_trip, mesh), 0, atol=1e-6)

    def test_shear_closure_is_structural(self):
        grid = TorusGrid(8, (8, 8))
        assert LoopFlow(shear_hamiltonian(grid, 0, 1.0), 64).closure_defect() < 1e-12

    def test_coupled_closure_fourth_order(self):
        grid = TorusGrid(8, (8, 8))
        H = coupled_hamiltonian(grid)
        d64 = LoopFlow(H, 64).closure_defect()
        d128 = LoopFlow(H, 128).closure_defect()
        assert d64 > 1e-7  # coarse defect is measurable, not float noise
        assert 12.0 <= d64 / d128 <= 20.0


class TestLength:
    def test_reparametrized_shear_length(self):
        # integral of |pi sin(2 pi t)| = 2
        grid = TorusGrid(64, (16, 16))
        H = shear_hamiltonian(grid, 0, 1.0)
        assert abs(loop_length(H) - 2.0) <= 2.0 / 64

    def test_symmetry_under_negation(self):
        grid = TorusGrid(16, (8, 8))
        H = shear_hamiltonian(grid, 0, 0.7)
        Hm = NormalizedHamiltonian(scale_field(H.field, -1.0))
        assert loop_length(H) == loop_length(Hm)

    def test_bi_invariance_under_fiber_permutation(self):
        # relabeling fiber cells permutes each fiber's sample set: the
        # per-time sup, hence the length, is unchanged exactly
        grid = TorusGrid(8, (4, 4))
        H = coupled_hamiltonian(grid, 0.3)
        rng = np.random.default_rng(5)
        psi = CellPermutation(grid, rng.permutation(16))
        flat = H.field.samples.reshape(8, 16)[:, psi.perm].reshape(8, 4, 4)
        moved = NormalizedHamiltonian(ScalarField(grid, flat, "S1xY"))
        assert loop_length(moved) == pytest.approx(loop_length(H), abs=0)


class TestCompose:
    def test_zero_elements_pass_through(self):
        grid = TorusGrid(8, (8, 8))
        H = shear_hamiltonian(grid, 0, 0.4)
        z = zero_hamiltonian(grid)
        assert compose_loops(H, z) is H
        assert compose_loops(z, H) is H

    def test_fiber_means_reverified(self):
        grid = TorusGrid(16, (16, 16))
        H2, H1 = catalog_pair(grid)
        K = compose_loops(H2, H1)
        assert K.fiber_mean_defect <= 1e-10
        assert np.abs(K.field.samples.mean(axis=(1, 2))).max() <= 1e-12

    def test_subadditivity_on_catalog_pairs(self):
        grid = TorusGrid(16, (8, 8))
        rng = np.random.default_rng(6)
        for _ in range(5):
            a, b = rng.uniform(0.05, 0.5, size=2)
            H2 = shear_hamiltonian(grid, 0, a)
            H1 = shear_hamiltonian(grid, 1, b)
            K = compose_loops(H2, H1)
            assert loop_length(K) <= loop_length(H2) + loop_length(H1) + 1e-12

    def test_flow_composition_oracle(self):
        # flow(compose(H2, H1))(t) == flow(H2)(t) o flow(H1)(t)
        grid = TorusGrid(8, (8, 8))
        H2, H1 = catalog_pair(grid)
        K = compose_loops(H2, H1)
        assert K.velocity_fn is not None
        fwd = LoopFlow(K, 512).forward_mesh()
        mesh = grid.y_mesh()
        worst = 0.0
        for j, t in enumerate(grid.t_values):
            ana = H2.analytic_loop.map_at(t).apply_points(
                H1.analytic_loop.map_at(t).apply_points(mesh)
            )
            worst = max(worst, float(circle_dist(fwd[j], ana).max()))
        assert worst <= 1e-5

    def test_same_axis_shears_add(self):
        grid = TorusGrid(16, (8, 8))
        H2 = shear_hamiltonian(grid, 0, 0.3)
        H1 = shear_hamiltonian(grid, 0, 0.2)
        K = compose_loops(H2, H1)
        # h2^{-1} leaves y1 alone and H1 reads only y1: plain sum, exactly
        np.testing.assert_allclose(
            K.field.samples, H2.field.samples + H1.field.samples, atol=1e-14
        )


class TestInvert:
    def test_shear_self_inversion_exact(self):
        grid = TorusGrid(16, (8, 8))
        H = shear_hamiltonian(grid, 0, 0.4)
        K = invert_loop(H)
        np.testing.assert_allclose(K.field.samples, -H.field.samples, atol=0)
        assert K.field.closed_form is not None
        assert loop_length(K) == loop_length(H)

    def test_double_inversion(self):
        grid = TorusGrid(16, (8, 8))
        H = shear_hamiltonian(grid, 1, 0.4)
        back = invert_loop(invert_loop(H))
        np.testing.assert_allclose(back.field.samples, H.field.samples, atol=1e-12)

    def test_composition_with_inverse_is_zero(self):
        grid = TorusGrid(16, (8, 8))
        H = shear_hamiltonian(grid, 0, 0.4)
        K = compose_loops(H, invert_loop(H))
        assert sup_norm(K.field) <= 1e-12

    def test_inversion_against_translation_loop(self):
        # reading cos(2 pi y2) against the torus-sweep loop shifts its phase
        grid = TorusGrid(8, (8, 8))
        field = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
        H = NormalizedHamiltonian(field)
        K = invert_loop(H, loop=furstenberg_loop(BETA))
        pts = np.random.default_rng(7).random((30, 3))
        expect = -np.cos(2 * math.pi * (pts[:, 2] + BETA))
        np.testing.assert_allclose(K.field.evaluate(pts), expect, atol=1e-14)
        assert loop_length(K) == pytest.approx(1.0, abs=1e-12)

    def test_sampled_inversion_preserves_length_approximately(self):
        # a field read against a shear of the coordinate it depends on
        grid = TorusGrid(16, (16, 16))
        H = shear_hamiltonian(grid, 0, 0.4)
        K = invert_loop(H, loop=ShearLoop(1, 0.3))
        assert K.field.closed_form is None
        assert abs(loop_length(K) - loop_length(H)) <= 0.02 * loop_length(H)
        assert K.fiber_mean_defect <= 1e-12


class TestAsymptoticNorm:
    def test_zero_hamiltonian(self):
        grid = TorusGrid(8, (8, 8))
        T = SkewProduct(GOLDEN, furstenberg_loop(BETA))
        np.testing.assert_allclose(
            asymptotic_norm_estimate(zero_hamiltonian(grid), T, [1, 2, 3]), 0.0, atol=0
        )

    def test_furstenberg_geometric_values(self):
        grid = TorusGrid(8, (8, 8))
        field = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
        H = NormalizedHamiltonian(field)
        T = SkewProduct(GOLDEN, furstenberg_loop(BETA))
        ks = [1, 2, 10, 100]
        got = asymptotic_norm_estimate(H, T, ks)
        expect = [
            abs(math.sin(math.pi * k * BETA)) / (k * math.sin(math.pi * BETA))
            for k in ks
        ]
        np.testing.assert_allclose(got, expect, atol=1e-9)

    def test_single_factor_equals_inverted_length(self):
        grid = TorusGrid(8, (8, 8))
        field = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
        H = NormalizedHamiltonian(field)
        T = SkewProduct(GOLDEN, furstenberg_loop(BETA))
        got = asymptotic_norm_estimate(H, T, [1])[0]
        assert got == pytest.approx(loop_length(invert_loop(H)), abs=1e-12)

    def test_rejects_non_increasing_ks(self):
        grid = TorusGrid(8, (8, 8))
        T = SkewProduct(GOLDEN, furstenberg_loop(BETA))
        with pytest.raises(InvalidFieldError, match="increasing"):
            asymptotic_norm_estimate(zero_hamiltonian(grid), T, [3, 2])


def test_ramp_profile_closes():
    assert ramp_profile(0.0) == 0.0
    assert ramp_profile(1.0) == pytest.approx(0.0, abs=1e-30)
    np.testing.assert_allclose(ramp_profile(0.5), 1.0, atol=1e-15)


def test_flow_backed_loop_wraps_generator():
    grid = TorusGrid(8, (8, 8))
    H = coupled_hamiltonian(grid)
    loop = FlowBackedLoop(H, 64)
    pts = np.random.default_rng(8).random((10, 2))
    direct = flow_of_hamiltonian(H, 0.25, step_count=64).apply_points(pts)
    np.testing.assert_allclose(loop.map_at(0.25).apply_points(pts), direct, atol=0)
