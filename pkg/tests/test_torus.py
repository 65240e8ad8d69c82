import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_field
from isoworkbench.torus import (Ball, BallUnionComplement, RasterMask, RingStencil, ScalarField,
                                TorusPoint, WholeTorus, cell_centers, det_sum, dist_to_ball_union,
                                distance_field, second_difference_bound, slope_field, torus_distance,
                                wrap_delta)

coord = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)
point = st.tuples(coord, coord)


class TestDistance:
    def test_antipode(self):
        assert torus_distance((0, 0), (0.5, 0.5)) == pytest.approx(math.sqrt(2) / 2, abs=1e-15)

    def test_wraps_around(self):
        assert torus_distance((0.1, 0.1), (0.9, 0.1)) == pytest.approx(0.2, abs=1e-15)

    def test_identity(self):
        assert torus_distance((0.3, 0.7), (0.3, 0.7)) == 0.0

    def test_metric_on_random_triples(self):
        rng = np.random.default_rng(1)
        x, y, z = rng.random((3, 10_000, 2))
        dxy, dyz, dxz = torus_distance(x, y), torus_distance(y, z), torus_distance(x, z)
        assert np.all(dxy >= 0)
        assert np.array_equal(dxy, torus_distance(y, x))
        assert np.all(dxz <= dxy + dyz)

    @given(point, point, point)
    def test_triangle_inequality(self, a, b, c):
        assert torus_distance(a, c) <= torus_distance(a, b) + torus_distance(b, c) + 1e-15

    @given(point, point)
    def test_bounded_by_diameter(self, a, b):
        assert 0.0 <= torus_distance(a, b) <= math.sqrt(2) / 2 + 1e-15

    @given(point, st.integers(-3, 3), st.integers(-3, 3))
    def test_invariant_under_integer_shifts(self, a, m, n):
        b = (a[0] + m, a[1] + n)
        assert torus_distance(a, b) <= 1e-14

    def test_torus_point_is_canonical(self):
        p = TorusPoint(-1e-18, 1.25)
        assert (p.u, p.v) == (0.0, 0.25)

    @given(st.floats(-10, 10, allow_nan=False))
    def test_wrap_delta_range(self, d):
        w = float(wrap_delta(d))
        assert -0.5 <= w < 0.5
        assert abs((d - w) - round(d - w)) < 1e-9


class TestFields:
    def test_distance_field_values(self):
        # x on a cell center, so the sample points sit at the example offsets
        f = distance_field((0.5 / 8, 0.5 / 8), 8)
        assert f.values[2, 0] == pytest.approx(0.25, abs=1e-15)
        assert f.values[4, 4] == pytest.approx(math.sqrt(2) / 2, abs=1e-15)

    def test_ball_union_distance(self):
        c, r = [(0, 0)], [0.125]
        assert dist_to_ball_union((0.5, 0), c, r) == pytest.approx(0.375)
        assert dist_to_ball_union((0, 0), c, r) == pytest.approx(-0.125)
        assert dist_to_ball_union((0.125, 0), c, r) == pytest.approx(0.0, abs=1e-17)

    def test_empty_ball_union_rejected(self):
        with pytest.raises(ValueError):
            dist_to_ball_union((0, 0), np.zeros((0, 2)), [])

    def test_evaluate_reproduces_cell_values(self):
        f = smooth_field(32, 3)
        U, V = cell_centers(32)
        assert np.allclose(f.evaluate(np.stack([U, V], -1)), f.values, atol=1e-14)

    def test_integrate_constant(self):
        assert ScalarField(np.full((16, 16), 3.0)).integrate() == 3.0

    def test_rejects_bad_arrays(self):
        with pytest.raises(ValueError):
            ScalarField(np.zeros((3, 4)))
        with pytest.raises(ValueError):
            ScalarField(np.array([[np.nan]]))

    @given(st.permutations(list(np.linspace(-1, 1, 17) ** 3 * 1e16)))
    def test_det_sum_order_independent(self, vals):
        assert det_sum(vals) == det_sum(sorted(vals))


class TestRegions:
    def test_ball_open_and_closed(self):
        b = Ball((0, 0), 0.25)
        on = np.array([0.25, 0.0])
        assert not b.contains(on)
        assert Ball((0, 0), 0.25, closed=True).contains(on)

    def test_ball_radius_validation(self):
        with pytest.raises(ValueError):
            Ball((0, 0), 0.8)

    def test_complement_and_whole_torus(self):
        comp = BallUnionComplement(np.array([[0.5, 0.5]]), np.array([0.1]))
        assert comp.contains(np.array([0.0, 0.0]))
        assert not comp.contains(np.array([0.5, 0.55]))
        assert WholeTorus().mask(4).all()

    def test_raster_mask_resolution(self):
        m = RasterMask(np.eye(8, dtype=bool))
        assert m.contains(np.array([0.5 / 8, 0.5 / 8]))
        with pytest.raises(ValueError):
            m.mask(16)


class TestSlope:
    def test_stencil_rejects_subgrid_radius(self):
        with pytest.raises(ValueError):
            RingStencil(64, 0.5 / 64)

    def test_constant_field_has_zero_slope(self):
        assert np.all(slope_field(ScalarField(np.full((32, 32), 7.0))).values == 0)

    def test_distance_field_has_unit_slope(self):
        G = 512
        d = distance_field((0.5, 0.5), G)
        s = slope_field(d).values
        sel = (d.values > 0.05) & (d.values < 0.45)
        # direction sampling biases low, bilinear interpolation of a convex function biases high
        assert s[sel].min() >= math.cos(math.pi / 32)
        assert s[sel].max() <= 1 + (1 / G) / (2 * 0.05)

    @pytest.mark.parametrize("lam", [2.0, -0.5, 4.0, -0.25])
    def test_homogeneity_exact_for_powers_of_two(self, lam):
        f = smooth_field(64, 5)
        assert np.array_equal(slope_field(f * lam).values, abs(lam) * slope_field(f).values)

    @given(st.floats(-50, 50, allow_nan=False).filter(lambda x: abs(x) > 1e-3))
    @settings(max_examples=25, deadline=None)
    def test_homogeneity(self, lam):
        f = smooth_field(32, 6)
        a = slope_field(f * lam).values
        b = abs(lam) * slope_field(f).values
        assert np.all(np.abs(a - b) <= 16 * np.finfo(float).eps * np.abs(lam) * np.abs(f.values).max() * 32)

    @given(st.integers(0, 10_000), st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_subadditivity(self, s1, s2):
        f, g = smooth_field(48, s1, kmax=3), smooth_field(48, s2, kmax=3)
        lhs = slope_field(f + g).values
        rhs = slope_field(f).values + slope_field(g).values
        eps = 64 * np.finfo(float).eps * 48 * (np.abs(f.values).max() + np.abs(g.values).max())
        assert np.all(lhs <= rhs + eps)

    @pytest.mark.parametrize("phi,dphi,d2max", [(np.sin, np.cos, 1.0), (np.exp, np.exp, math.e ** 1.6)])
    def test_chain_rule(self, phi, dphi, d2max):
        G = 256
        f = smooth_field(G, 9, kmax=2, amp=0.3)
        assert np.abs(f.values).max() < 1.6
        s = 1.0 / G
        L = slope_field(f).values.max()
        H = second_difference_bound(f)
        lhs = slope_field(f.map(phi)).values
        rhs = np.abs(dphi(f.values)) * slope_field(f).values
        # Taylor remainder of phi over one stencil step, plus the curvature of f
        eps = s * (d2max * L ** 2 + math.e ** 1.6 * H)
        assert np.max(np.abs(lhs - rhs)) <= eps

    def test_second_difference_of_quadratic(self):
        G = 64
        U, _ = cell_centers(G)
        f = ScalarField(np.sin(2 * np.pi * U))
        assert second_difference_bound(f) == pytest.approx(4 * math.pi ** 2, rel=1e-2)
