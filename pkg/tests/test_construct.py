"""Loop constructions: centering, multi-target flattening, periodic loops,
and the two conjugated-shift certificates."""

from fractions import Fraction

import numpy as np
import pytest

from ergoloop.construct import (
    CellMapLoop,
    ConjugatedShift,
    PeriodicLoop,
    ProductSet,
    circle_sweep_gap,
    conjugated_orbit_coverage,
    conjugation_identity_defect,
    conjugator_for_minimality,
    conjugator_for_unique_ergodicity,
    fiberwise_center,
    first_small_ergodic_average,
    loop_certificate,
    loop_integral_recheck,
    multi_target_average,
    rotation_hit_table,
    small_integral_loop,
)
from ergoloop.covering import grid_covering_oracle
from ergoloop.errors import (
    GridTooCoarseError,
    InvalidFieldError,
    OrbitCapError,
    SweepError,
)
from ergoloop.phase import (
    GOLDEN,
    ScalarField,
    TorusGrid,
    TorusTranslation,
    TrigPoly,
    sup_norm,
)


def _y_field(grid, samples):
    return ScalarField(grid, np.asarray(samples, dtype=float), "Y")


def _random_zero_mean(grid, rng, norm=1.0):
    vals = rng.standard_normal(grid.res_y)
    vals = vals - vals.mean()
    return _y_field(grid, vals * (norm / np.abs(vals).max()))


def _traveling_wave(grid):
    """cos(2 pi (t + y2)): moves in t, centered along every fiber."""
    return ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (1, 0, 1)), "S1xY")


class TestFiberwiseCenter:
    def test_y_independent_field_centers_to_zero(self):
        grid = TorusGrid(16, (4, 4))
        f = ScalarField.from_closed_form(grid, TrigPoly.sine(3, (1, 0, 0)), "S1xY")
        centered = fiberwise_center(f)
        np.testing.assert_allclose(centered.samples, 0.0, atol=1e-15)
        assert centered.closed_form is not None
        assert abs(centered.closed_form(np.array([0.3, 0.1, 0.7]))) < 1e-15

    def test_idempotent(self):
        grid = TorusGrid(8, (6, 5))
        rng = np.random.default_rng(10)
        f = ScalarField(grid, rng.standard_normal((8, 6, 5)), "S1xY")
        once = fiberwise_center(f)
        twice = fiberwise_center(once)
        np.testing.assert_allclose(twice.samples, once.samples, atol=1e-15)

    def test_mixed_field_keeps_only_fiber_part(self):
        grid = TorusGrid(16, (8, 8))

        def mixed(mesh):
            t, y1 = mesh[..., 0], mesh[..., 1]
            return t * np.cos(2 * np.pi * y1) + np.sin(2 * np.pi * t)

        def survivor(mesh):
            return mesh[..., 0] * np.cos(2 * np.pi * mesh[..., 1])

        centered = fiberwise_center(ScalarField.from_function(grid, mixed, "S1xY"))
        expect = ScalarField.from_function(grid, survivor, "S1xY")
        np.testing.assert_allclose(centered.samples, expect.samples, atol=1e-12)

    def test_every_fiber_mean_vanishes(self):
        grid = TorusGrid(12, (5, 7))
        rng = np.random.default_rng(11)
        f = ScalarField(grid, rng.standard_normal((12, 5, 7)), "S1xY")
        centered = fiberwise_center(f)
        assert np.abs(centered.samples.mean(axis=(1, 2))).max() < 1e-15

    def test_aliased_harmonic_drops_closed_form(self):
        # cos(2 pi n1 y1) samples to the constant 1: its sampled fiber
        # means disagree with the closed form's t-only part
        grid = TorusGrid(8, (4, 4))
        f = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 4, 0)), "S1xY")
        centered = fiberwise_center(f)
        assert centered.closed_form is None
        np.testing.assert_allclose(centered.samples, 0.0, atol=1e-15)

    def test_rejects_y_domain(self):
        grid = TorusGrid(8, (4, 4))
        with pytest.raises(InvalidFieldError, match="S1 x Y"):
            fiberwise_center(_y_field(grid, np.zeros((4, 4))))


class TestMultiTargetAverage:
    def test_single_target_matches_flatten_sup(self):
        from ergoloop.averaging import flatten_sup

        grid = TorusGrid(2, (8, 8))
        rng = np.random.default_rng(12)
        h = _random_zero_mean(grid, rng)
        chain = multi_target_average([h], 0.05)
        direct = flatten_sup(h, grid_covering_oracle(grid), 0.05)
        np.testing.assert_array_equal(
            chain.apply(h).samples, direct.apply(h).samples
        )

    def test_pair_with_negation_shares_one_factor(self):
        grid = TorusGrid(2, (8, 8))
        rng = np.random.default_rng(13)
        h = _random_zero_mean(grid, rng)
        minus = _y_field(grid, -h.samples)
        chain = multi_target_average([h, minus], 0.05)
        assert len(chain.operators) == 1
        assert sup_norm(chain.apply(h)) < 0.05
        assert sup_norm(chain.apply(minus)) < 0.05

    def test_three_random_targets(self):
        grid = TorusGrid(2, (32, 32))
        rng = np.random.default_rng(14)
        fields = [_random_zero_mean(grid, rng) for _ in range(3)]
        chain = multi_target_average(fields, 0.1)
        for f in fields:
            assert sup_norm(chain.apply(f)) < 0.1

    def test_multi_step_oracle_accumulates_factors(self):
        grid = TorusGrid(2, (8, 8))
        rng = np.random.default_rng(15)
        fields = [_random_zero_mean(grid, rng) for _ in range(2)]
        oracle = grid_covering_oracle(grid, style="assembled")
        chain = multi_target_average(fields, 0.3, covering_oracle=oracle)
        assert len(chain.operators) >= 2
        for f in fields:
            assert sup_norm(chain.apply(f)) < 0.3

    def test_validation(self):
        grid = TorusGrid(2, (4, 4))
        with pytest.raises(InvalidFieldError, match="no target"):
            multi_target_average([], 0.1)
        big = _y_field(grid, 2.0 * _random_zero_mean(grid, np.random.default_rng(0)).samples)
        with pytest.raises(InvalidFieldError, match="sup norm"):
            multi_target_average([big], 0.1)
        tilted = _y_field(grid, np.ones((4, 4)))
        with pytest.raises(InvalidFieldError, match="zero-mean"):
            multi_target_average([tilted], 0.1)


class TestLoopTypes:
    def test_piece_lookup(self):
        grid = TorusGrid(8, (4, 4))
        maps = tuple(TorusTranslation(grid, (0, j)) for j in range(4))
        loop = CellMapLoop(grid, maps)
        got = loop.piece_indices(np.array([0.0, 0.249, 0.25, 0.74, 0.99]))
        np.testing.assert_array_equal(got, [0, 0, 1, 2, 3])
        assert loop.value_at(0.6) is maps[2]

    def test_repetition_must_match_denominator(self):
        grid = TorusGrid(8, (4, 4))
        base = CellMapLoop(grid, (TorusTranslation(grid, (1, 0)),))
        loop = PeriodicLoop(base, 6, Fraction(1, 3))
        assert loop.span == 6
        with pytest.raises(InvalidFieldError, match="multiple of the rationality"):
            PeriodicLoop(base, 4, Fraction(1, 3))

    def test_sample_pieces_match_float_path_on_binary_grid(self):
        grid = TorusGrid(8, (3, 3))
        base = CellMapLoop(grid, tuple(TorusTranslation(grid, (i, 0)) for i in range(4)))
        loop = PeriodicLoop(base, 4, Fraction(1, 2))
        for res in (loop.span, 2 * loop.span):
            exact = loop.sample_pieces(res)
            floats = loop.piece_indices(np.arange(res) / res)
            np.testing.assert_array_equal(exact, floats)

    def test_sample_pieces_exact_where_floats_round(self):
        # 1/3 has no binary representation; the integer path must still
        # place the boundary samples on the correct piece
        grid = TorusGrid(8, (3, 3))
        base = CellMapLoop(grid, tuple(TorusTranslation(grid, (i, 0)) for i in range(3)))
        loop = PeriodicLoop(base, 4, Fraction(1, 2))
        np.testing.assert_array_equal(loop.sample_pieces(12), np.tile([0, 1, 2], 4))

    def test_native_resolution_rounds_up(self):
        grid = TorusGrid(8, (3, 3))
        base = CellMapLoop(grid, tuple(TorusTranslation(grid, (i, 0)) for i in range(3)))
        loop = PeriodicLoop(base, 4, Fraction(1, 4))
        assert loop.native_res_t() == 12
        assert loop.native_res_t(minimum=13) == 24

    def test_conjugated_shift_carries_alpha_and_commutes(self):
        grid = TorusGrid(12, (4, 4))
        base = CellMapLoop(grid, tuple(TorusTranslation(grid, (i, i)) for i in range(4)))
        conj = ConjugatedShift(grid, PeriodicLoop(base, 4, Fraction(1, 4)), GOLDEN)
        assert float(conj.alpha) == pytest.approx(GOLDEN)
        assert conj.commutation_defect() == 0


class TestSmallIntegralLoop:
    def test_zero_field_gives_identity_loop(self):
        grid = TorusGrid(16, (4, 4))
        f = ScalarField(grid, np.zeros((16, 4, 4)), "S1xY")
        loop = small_integral_loop(f, 0.1, Fraction(1, 3))
        assert loop.base.n_pieces == 1
        assert loop.base.maps[0].is_identity()
        assert loop.repetition == 3

    def test_fiber_constant_field_integrates_to_zero(self):
        grid = TorusGrid(32, (8, 8))
        f = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
        loop = small_integral_loop(f, 0.1, Fraction(1, 3))
        cert = loop_certificate(f, loop, anchor_count=loop.repetition)
        assert np.abs(cert.integral_profile).max() < 1e-12
        assert cert.interval_terms.max() < 0.1 / (3 * loop.repetition)
        recheck = loop_integral_recheck(f, loop)
        np.testing.assert_allclose(recheck, cert.integral_profile, atol=1e-12)

    def test_traveling_wave_full_certificate(self):
        grid = TorusGrid(1024, (8, 8))
        f = fiberwise_center(_traveling_wave(grid))
        eps = 0.1
        loop = small_integral_loop(f, eps, Fraction(1, 3))
        assert loop.repetition % 3 == 0
        cert = loop_certificate(f, loop, anchor_count=loop.repetition)
        assert cert.interval_drift.max() < eps / 9.0
        assert cert.interval_terms.max() < eps / (3.0 * loop.repetition)
        assert np.abs(cert.integral_profile).max() < eps
        # periodicity is exact on the loop's own grid, not approximate
        pieces = loop.sample_pieces(loop.span)
        np.testing.assert_array_equal(pieces, np.roll(pieces, -(loop.span // 3)))

    def test_requires_fiberwise_centering(self):
        grid = TorusGrid(64, (4, 4))
        f = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (1, 0, 0)), "S1xY")
        with pytest.raises(InvalidFieldError, match="fiberwise center"):
            small_integral_loop(f, 0.5, Fraction(1, 2))

    def test_coarse_grid_is_refused(self):
        grid = TorusGrid(8, (4, 4))
        f = fiberwise_center(_traveling_wave(grid))
        with pytest.raises(GridTooCoarseError, match="grid too coarse"):
            small_integral_loop(f, 0.1, Fraction(1, 3))

    def test_rationality_must_be_exact(self):
        grid = TorusGrid(16, (4, 4))
        f = ScalarField(grid, np.zeros((16, 4, 4)), "S1xY")
        with pytest.raises(InvalidFieldError, match="exact"):
            small_integral_loop(f, 0.1, 0.3333333)
        with pytest.raises(InvalidFieldError, match="denominator"):
            small_integral_loop(f, 0.1, Fraction(1, 10**6))
        with pytest.raises(InvalidFieldError, match="positive"):
            small_integral_loop(f, -0.1, Fraction(1, 3))


def _half_band_window(grid, t_count):
    n1, n2 = grid.res_y
    cells = np.flatnonzero(np.arange(n1 * n2) // n2 < n1 // 2)
    return ProductSet(grid, 0, t_count, cells)


class TestConjugatorMinimality:
    def test_full_v_needs_identity_only(self):
        grid = TorusGrid(16, (8, 8))
        window = ProductSet(grid, 0, 1, np.arange(64))
        conj = conjugator_for_minimality(window, Fraction(1, 4))
        assert all(m.is_identity() for m in conj.loop.base.maps)
        assert circle_sweep_gap(conj, window) == 0

    def test_quarter_square_sweep_covers(self):
        grid = TorusGrid(32, (16, 16))
        mask = np.zeros((16, 16), dtype=bool)
        mask[:8, :8] = True
        window = ProductSet(grid, 0, 32, np.flatnonzero(mask.reshape(-1)))
        conj = conjugator_for_minimality(window, Fraction(1, 4))
        assert circle_sweep_gap(conj, window) == 0
        assert conj.commutation_defect() == 0
        applied = {m.shift for m in conj.loop.base.maps}
        assert len(applied) >= 4  # a quarter square needs four translates

    def test_commutes_with_rational_shift_exactly(self):
        grid = TorusGrid(32, (8, 8))
        window = _half_band_window(grid, 16)
        conj = conjugator_for_minimality(window, Fraction(1, 4))
        rng = np.random.default_rng(16)
        pts = rng.random((50, 3))
        shifted = pts.copy()
        shifted[:, 0] = (shifted[:, 0] + 0.25) % 1.0
        a = conj.apply_points(shifted)
        b = conj.apply_points(pts)
        b[:, 0] = (b[:, 0] + 0.25) % 1.0
        np.testing.assert_array_equal(a, b)

    def test_orbit_coverage_within_cap(self):
        grid = TorusGrid(32, (32, 32))
        window = _half_band_window(grid, 16)  # quarter of the phase cells
        conj = conjugator_for_minimality(window, Fraction(1, 4))
        steps = conjugated_orbit_coverage(conj, window)
        assert 0 < steps <= 10**5

    def test_conjugation_identity_pointwise(self):
        grid = TorusGrid(32, (8, 8))
        window = _half_band_window(grid, 16)
        conj = conjugator_for_minimality(window, Fraction(1, 4))
        rng = np.random.default_rng(17)
        pts = rng.random((40, 3))
        assert conjugation_identity_defect(conj, pts, 25) == 0

    def test_sweep_failure_and_validation(self):
        grid = TorusGrid(32, (16, 16))
        # one cell must be translated 256 ways, but Delta meets 2 classes
        tiny = ProductSet(grid, 0, 2, np.array([0]))
        with pytest.raises(SweepError, match="sweep failed"):
            conjugator_for_minimality(tiny, Fraction(1, 4))
        window = _half_band_window(grid, 8)
        with pytest.raises(InvalidFieldError, match="divide"):
            conjugator_for_minimality(window, Fraction(1, 5))
        with pytest.raises(InvalidFieldError, match="non-empty"):
            ProductSet(grid, 0, 4, np.array([], dtype=int))

    def test_rotation_table_on_rational_angle_marks_unreachable(self):
        table = rotation_hit_table(16, 0.25, cap=200)
        reachable = table >= 0
        np.testing.assert_array_equal(reachable, np.arange(16) % 4 == 0)
        assert table[0] == 0


class TestConjugatorUniqueErgodicity:
    def test_zero_field_settles_immediately(self):
        grid = TorusGrid(16, (4, 4))
        f = ScalarField(grid, np.zeros((16, 4, 4)), "S1xY")
        conj = conjugator_for_unique_ergodicity(f, 0.1, Fraction(1, 3))
        n, worst = first_small_ergodic_average(f, conj, 0.1)
        assert n == 1
        assert worst == 0.0

    def test_fiber_cosine_certificate(self):
        grid = TorusGrid(32, (8, 8))
        f = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
        conj = conjugator_for_unique_ergodicity(f, 0.1, Fraction(1, 3))
        assert conj.commutation_defect() == 0
        n, worst = first_small_ergodic_average(f, conj, 0.1)
        assert n <= 10**5
        assert worst < 0.1
        recheck = loop_integral_recheck(f, conj.loop)
        assert np.abs(recheck).max() < 0.05

    def test_zero_mean_required(self):
        grid = TorusGrid(16, (4, 4))
        f = ScalarField(grid, np.ones((16, 4, 4)), "S1xY")
        with pytest.raises(InvalidFieldError, match="zero-mean"):
            conjugator_for_unique_ergodicity(f, 0.1, Fraction(1, 3))

    def test_cap_exhaustion_raises(self):
        grid = TorusGrid(16, (4, 4))
        f = ScalarField.from_closed_form(grid, TrigPoly.cosine(3, (0, 0, 1)), "S1xY")
        conj = ConjugatedShift(
            grid,
            small_integral_loop(fiberwise_center(f), 0.05, Fraction(1, 3)),
            GOLDEN,
        )
        # cap=1: G_1 is a single pushforward of the cosine, sup exactly 1
        with pytest.raises(OrbitCapError, match="ergodic averages"):
            first_small_ergodic_average(f, conj, 1e-9, cap=1)
