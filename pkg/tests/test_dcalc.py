import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_field
from isoworkbench.dcalc import (DEFAULT_EPS, GridTolerance, MCPParams,
                                check_dcalc_rules, check_deformation, comparison_log_derivative,
                                d_fields, deformation_probe, mcp_constant, mollifier_family,
                                quadrature_tolerance, random_deformation_cases, ring_analysis,
                                sphere_mass_scan)
from isoworkbench.dcalc import TestFunction as Probe, test_family as make_family
from isoworkbench.dcalc import check_laplacian_bound
from isoworkbench.shapes import Disk, Rect, ShapeSet
from isoworkbench.torus import (RingStencil, ScalarField, cell_centers, distance_field, slope_field,
                                wrap_delta)


def stencil(G):
    return RingStencil(G, 1.0 / G, 32)


class TestPairing:
    def test_self_pairing_is_slope_squared(self):
        f = smooth_field(128, 11, offset=1.0)
        an = ring_analysis(f, stencil(128))
        plus, minus = an.pair(f)
        assert np.array_equal(plus, an.slope ** 2)
        assert np.array_equal(minus, an.slope ** 2)

    def test_constant_pairs_to_zero(self):
        g = smooth_field(128, 12)
        plus, minus = ring_analysis(g, stencil(128)).pair(np.ones((128, 128)))
        assert np.all(plus == 0) and np.all(minus == 0)

    @pytest.mark.parametrize("G", [256, 512])
    def test_gradient_inner_product(self, G):
        # locally D+f(grad g) is grad f . grad g
        U, V = cell_centers(G)
        du, dv = wrap_delta(U - 0.5), wrap_delta(V - 0.5)
        g = du ** 2 + dv ** 2
        f = np.sin(2 * np.pi * U) / (2 * np.pi)
        plus, minus = ring_analysis(g, stencil(G)).pair(f)
        exact = np.cos(2 * np.pi * U) * 2 * du
        sel = np.hypot(du, dv) < 0.3
        s = 1.0 / G
        Lf, Hf, Lg, Hg = 1.0, 2 * math.pi, 0.6, 2.0
        eps = s * (Lf * Hg + Hf * Lg)
        assert np.abs(plus - exact)[sel].max() <= eps
        assert np.abs(minus - exact)[sel].max() <= eps

    def test_distance_chain_rule(self):
        G = 256
        d = distance_field((0.5, 0.5), G).values
        plus, _ = ring_analysis(d * d, stencil(G)).pair(d)
        sel = (d > 0.05) & (d < 0.45)
        assert np.abs(plus - 2 * d)[sel].max() <= 4.0 / G

    def test_zero_slope_gives_zero(self):
        plus, minus = ring_analysis(np.full((64, 64), 2.0), stencil(64)).pair(smooth_field(64, 1))
        assert np.all(plus == 0) and np.all(minus == 0)


class TestDFields:
    def test_monotone_quotients(self):
        f, g = smooth_field(128, 21, 1.5), smooth_field(128, 22, 2.0)
        D = d_fields(f, g, stencil(128))
        assert D.monotone
        assert np.all(D.minus_values <= D.plus_values)
        assert [q[1] for q in D.quotients[:4]] == sorted([q[1] for q in D.quotients[:4]], reverse=True)

    @pytest.mark.parametrize("eps", [(0.1, 0.05, 0.02), (0.1, 0.1, 0.05, 0.01), (0.1, 0.05, 0.02, 0.0)])
    def test_bad_schedule(self, eps):
        with pytest.raises(ValueError):
            d_fields(smooth_field(32, 1), smooth_field(32, 2), stencil(32), eps)

    def test_under_resolved_fields_raise(self):
        rng = np.random.default_rng(0)
        f = ScalarField(rng.normal(size=(64, 64)))
        g = ScalarField(rng.normal(size=(64, 64)))
        with pytest.raises(ValueError, match="under-resolved"):
            d_fields(f, g, stencil(64), tolerance=0.0)

    def test_default_schedule(self):
        assert len(DEFAULT_EPS) >= 4


class TestRules:
    @given(st.integers(0, 10_000))
    @settings(max_examples=4, deadline=None)
    def test_random_triples(self, seed):
        G = 128
        f, g, h = (smooth_field(G, seed * 3 + i, off) for i, off in enumerate((1.5, 2.0, 1.5)))
        rep = check_dcalc_rules(f, g, h, stencil(G))
        assert rep.passed, [r.to_dict() for r in rep.rows if not r.passed]

    def test_ordering_and_locality_are_exact(self):
        G = 128
        rep = check_dcalc_rules(smooth_field(G, 1, 1.5), smooth_field(G, 2, 2.0), smooth_field(G, 3, 1.5))
        assert rep.row("ordering").tolerance == 0.0 and rep.row("ordering").worst <= 0
        assert rep.row("locality").worst == 0.0 and rep.row("locality").cells > 0

    def test_tolerance_formula(self):
        tol = GridTolerance(0.01, 1e-12, 1.0, 2.0, 3.0, 4.0, 5.0)
        g = np.array([0.0, 1.0])
        # 2s (2|g| (Lg Hf + Hg Lf) + Lg^2 Lf) + rounding
        assert tol.chain(g)[1] == pytest.approx(2 * 0.01 * (2 * (2 * 4 + 5 * 1) + 4 * 1) + 1e-12)
        assert tol.leibniz() == pytest.approx(2 * 0.01 * 2 * 1 * 3 + 1e-12)


class TestMollifier:
    def test_profile_values(self):
        G, r, k = 1024, 0.25, 16.0
        x = (0.5 / G, 0.5 / G)
        g = mollifier_family(x, r, k, G).values
        # cells on the u-axis through x sit at exact multiples of h
        assert g[256, 0] == 1.0
        assert g[256 + 32, 0] == pytest.approx(0.5, abs=1e-12)
        assert g[256 + 64, 0] == pytest.approx(0.0, abs=1e-12)
        assert g[0, 0] == 1.0 and g.min() == 0.0

    def test_is_k_lipschitz(self):
        G, k = 512, 20.0
        g = mollifier_family((0.5, 0.5), 0.1, k, G)
        # bilinear taps across the inner kink overshoot by at most h / r
        assert slope_field(g).values.max() <= k * (1 + 1 / (G * 0.1))

    def test_shell_integral(self):
        # the ring slope sees each kink one stencil step early: excess about h k over k m(shell)
        G = 1024
        for r, k in ((0.4, 64.0), (0.2, 64.0), (0.3, 16.0)):
            I = slope_field(mollifier_family((0.5, 0.5), r, k, G)).integrate()
            shell = k * math.pi * ((r + 1 / k) ** 2 - r ** 2)
            assert 0 <= I / shell - 1 <= 1.2 * k / G

    def test_shell_integral_tends_to_perimeter(self):
        G, r = 2048, 0.3
        errs = []
        for k in (4.0, 8.0, 16.0):
            I = slope_field(mollifier_family((0.5, 0.5), r, k, G)).integrate()
            errs.append(abs(I / (2 * math.pi * r) - 1))
        assert errs[0] > errs[1] > errs[2]

    def test_l1_distance(self):
        G, r = 1024, 0.2
        d = distance_field((0.5, 0.5), G).values
        ball = (d < r).astype(float)
        prev = math.inf
        for k in (8.0, 16.0, 32.0, 64.0):
            g = mollifier_family((0.5, 0.5), r, k, G).values
            l1 = np.abs(g - ball).mean()
            shell = math.pi * ((r + 1 / k) ** 2 - r ** 2)
            assert l1 <= shell * 1.01
            assert l1 < prev
            prev = l1

    @pytest.mark.parametrize("r,k", [(-0.1, 1.0), (0.1, 0.0), (0.6, 2.0)])
    def test_bad_parameters(self, r, k):
        with pytest.raises(ValueError):
            mollifier_family((0, 0), r, k, 64)


class TestLaplacian:
    def test_zero_function(self):
        tf = Probe("zero", (0.5, 0.5), ())
        rep = check_laplacian_bound((0.5, 0.5), 0.4, 4.0, G=128, tests=[tf])
        assert rep.lhs == [0.0] and rep.rhs == [0.0] and rep.passed

    def test_family_is_supported_in_the_ball(self):
        tests = make_family((0.3, 0.7), 0.35, 50, seed=2)
        assert len(tests) == 50
        assert all(tf.support_radius() < 0.35 for tf in tests)
        d = distance_field((0.3, 0.7), 256).values
        for tf in tests[:10]:
            f = tf.field(256).values
            assert f.min() >= 0 and not np.any((f > 0) & (d >= 0.35))

    def test_sharp_constant_on_a_small_grid(self):
        flat = check_laplacian_bound((0.5, 0.5), 0.4, 4.05, n_tests=8, G=256)
        low = check_laplacian_bound((0.5, 0.5), 0.4, 3.8, n_tests=8, G=256)
        assert flat.passed and not low.passed
        assert flat.summary() == "no violation found among 8 tests"

    def test_radial_identity(self):
        # for radial f the pairing integrates to -4 int f
        rep = check_laplacian_bound((0.5, 0.5), 0.4, 4.0, n_tests=8, G=256)
        for tf, l, r in zip(rep.test_functions, rep.lhs, rep.rhs):
            if tf.kind == "radial-hat":
                assert l == pytest.approx(r, rel=0.03)

    def test_flat_sharpness_at_quadrature_tolerance(self):
        radial = [tf for tf in make_family((0.5, 0.5), 0.4, 50, seed=0) if tf.kind == "radial-hat"]
        eps = max(check_laplacian_bound((0.5, 0.5), 0.4, 4.0, G=256, tests=radial).eps_quad)
        above = check_laplacian_bound((0.5, 0.5), 0.4, 4 * (1 + eps), G=256, tests=radial)
        below = check_laplacian_bound((0.5, 0.5), 0.4, 4 * (1 - 5 * eps), G=256, tests=radial)
        assert above.passed and not below.passed

    @pytest.mark.parametrize("R,C", [(0.5, 4.0), (0.0, 4.0), (0.3, 0.0)])
    def test_bad_arguments(self, R, C):
        with pytest.raises(ValueError):
            check_laplacian_bound((0.5, 0.5), R, C, G=64, n_tests=1)

    def test_quadrature_tolerance(self):
        G = 256
        d = distance_field((0.5, 0.5), G).values
        f = np.where(d < 0.2, 1.0, 0.0)
        eps = quadrature_tolerance(f, d, 1 / G, 1 / G)
        # int f / d over int f for the unit disk of radius 0.2 is 2 / 0.2
        assert eps == pytest.approx(2 / G * (2 / 0.2) / 4, rel=0.02)


class TestDeformation:
    def test_concentric_equality(self):
        rep = check_deformation(Disk(0.5, 0.5, 0.2), (0.5, 0.5), 0.1, 4.0)
        assert rep.lhs_12 == pytest.approx(0.6 * math.pi, rel=1e-14)
        assert rep.rhs_12 == pytest.approx(0.6 * math.pi, rel=1e-14)
        assert abs(rep.margin_11) <= rep.error_bound

    def test_disjoint_ball(self):
        rep = check_deformation(Disk(0.5, 0.5, 0.1), (0.1, 0.1), 0.05, 4.0)
        assert rep.mass_in_ball == 0.0
        assert rep.margin_12 == 0.0

    def test_square_corner(self):
        E = Rect(0.5, 0.5, 0.3, 0.3)
        rep = check_deformation(E, (0.35, 0.35), 0.05, 4.0)
        assert rep.passed and rep.margin_11 >= 0 and rep.margin_12 >= 0
        # a quarter disk of the ball lies in E
        assert rep.mass_in_ball == pytest.approx(math.pi * 0.05 ** 2 / 4, rel=1e-12)

    def test_raster_agrees_with_closed_form(self):
        E = Rect(0.5, 0.5, 0.3, 0.3)
        a = check_deformation(E, (0.35, 0.35), 0.05, 4.0)
        b = check_deformation(ShapeSet().add(E), (0.35, 0.35), 0.05, 4.0, G=512)
        assert b.path == "raster-512"
        assert abs(a.lhs_12 - b.lhs_12) <= b.error_bound
        assert abs(a.mass_in_ball - b.mass_in_ball) <= 2 * math.pi * 0.05 / 512

    def test_random_cases(self):
        for E, x, r in random_deformation_cases(20, seed=5):
            rep = check_deformation(E, x, r, 4.0)
            assert rep.path == "closed-form"
            assert rep.margin_11 >= -rep.error_bound and rep.margin_12 >= -rep.error_bound

    @given(st.floats(0.02, 0.2), st.floats(0.01, 0.2), st.floats(0, 0.3), st.floats(0, 2 * math.pi))
    def test_ball_inside_set_is_equality(self, R, r, dist, ang):
        # any ball inside E is an equality case of the ball-boundary inequality at C = 4
        if dist + r >= R:
            return
        x = (0.5 + dist * math.cos(ang), 0.5 + dist * math.sin(ang))
        rep = check_deformation(Disk(0.5, 0.5, R), x, r, 4.0)
        assert abs(rep.margin_11) <= rep.error_bound * 1e3

    def test_probe_ratio(self, W20):
        rows = deformation_probe(W20, [1, 5, 10], delta=1e-3)
        c = W20.c
        for row in rows:
            assert row.ratio == pytest.approx(2 * (1 - c) / 1e-3, rel=2e-3)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            check_deformation(Disk(0.5, 0.5, 0.1), (0.5, 0.5), 0.0, 4.0)


class TestMCP:
    @pytest.mark.parametrize("N", [2.0, 3.5, 7.0])
    @pytest.mark.parametrize("R", [0.5, 1.0, 10.0])
    def test_flat(self, N, R):
        assert mcp_constant(MCPParams(0.0, N, R)) == 2 * N

    def test_hyperbolic(self):
        q = math.sqrt(0.5)
        expected = 2 * (1 + 2 * q * math.cosh(q) / math.sinh(q))
        assert mcp_constant(MCPParams(-1.0, 3.0, 1.0)) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(6.646, abs=1e-3)

    def test_positive_curvature(self):
        assert mcp_constant(MCPParams(1.0, 3.0, 1.0)) == 6.0
        with pytest.raises(ValueError, match="conjugate"):
            MCPParams(1.0, 3.0, math.pi * math.sqrt(2.0))

    @pytest.mark.parametrize("N,R", [(1.0, 1.0), (2.0, 0.0)])
    def test_bad_parameters(self, N, R):
        with pytest.raises(ValueError):
            MCPParams(0.0, N, R)

    @given(st.floats(-5, -1e-3), st.floats(1.5, 8), st.floats(0.01, 3), st.floats(0.01, 3))
    def test_monotone_in_radius(self, K, N, R1, R2):
        a, b = sorted((R1, R2))
        assert mcp_constant(MCPParams(K, N, a)) <= mcp_constant(MCPParams(K, N, b)) * (1 + 1e-14)

    @given(st.floats(1e-3, 2), st.floats(1e-3, 1))
    def test_log_derivative_limits(self, kappa, r):
        assert comparison_log_derivative(-kappa, r) >= 1.0
        assert comparison_log_derivative(kappa, min(r, 3.0 / math.sqrt(kappa))) <= 1.0


class TestSphereScan:
    def test_empty(self):
        scan = sphere_mass_scan((0, 0), None, 0)
        assert scan.radii.size == 0 and scan.to_rows() == []

    def test_flat_density_is_quiet(self):
        scan = sphere_mass_scan((0.5, 0.5), None, 40, G=512)
        assert not scan.flagged.any()
        far = scan.radii > 20 / 512
        assert np.allclose(scan.normalized[far], 1.0, rtol=0.1)

    def test_flags_the_first_ball(self, W20):
        scan = sphere_mass_scan((0.0, 0.0), W20, 60, G=512)
        hit = scan.radii[scan.flagged]
        assert hit.size > 0
        assert np.min(np.abs(hit - 0.125)) < 0.45 / 60 + 1 / 512
