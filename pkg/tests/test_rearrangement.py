import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isoworkbench.construction import BallSystem, C_DEFAULT, Profile, dyadic_radii
from isoworkbench.rearrangement import (SubBalls, VolumeVector, canonical_minimum, cascade_merge,
                                        exhaustive_cascade_check, profile_lower_bound_volumes,
                                        schwarz_rearrange, two_ball_move)

c = C_DEFAULT
r = dyadic_radii(6)


class TestSchwarz:
    def test_full_first_ball(self, packing20):
        sub = schwarz_rearrange(VolumeVector([c * math.pi / 64, 0, 0]), packing20)
        assert sub.slots.tolist() == [1]
        assert sub.radii[0] == pytest.approx(r[0], rel=1e-15)

    def test_quarter_masses_halve_radii(self, W20):
        v = VolumeVector.from_fractions([0.25] * 5, W20)
        sub = schwarz_rearrange(v, W20.balls)
        assert np.allclose(sub.radii, r[:5] / 2, rtol=1e-14)

    def test_empty(self, packing20):
        assert len(schwarz_rearrange(VolumeVector([0, 0]), packing20).areas) == 0

    def test_overfull_rejected(self, packing20):
        with pytest.raises(ValueError):
            schwarz_rearrange(VolumeVector([c * math.pi / 32]), packing20)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            VolumeVector([-1.0])

    def test_validate_against_torus(self, W20):
        with pytest.raises(ValueError, match="exceeds"):
            VolumeVector([0, c * math.pi / 64]).validate(W20)


class TestCascade:
    def test_three_half_radii(self, packing20):
        sub = SubBalls([1, 2, 3], (r[:3] / 2) ** 2)
        res = cascade_merge(sub, packing20)
        assert res.final.slots.tolist() == [1]
        assert res.final.radii[0] == pytest.approx(math.sqrt(21) / 64, rel=1e-15)
        assert res.perimeter == pytest.approx(2 * c * math.pi * math.sqrt(21) / 64, rel=1e-15)
        assert res.perimeter == pytest.approx(Profile()(21 * c * math.pi / 4096), rel=1e-14)

    def test_canonical_input_unchanged(self, packing20):
        res = cascade_merge(SubBalls([1, 2], r[:2] ** 2), packing20)
        assert res.perimeter == pytest.approx(3 * c * math.pi / 8, rel=1e-15)
        assert len(res.steps) == 1

    def test_single_ball_moves_to_first_slot(self, packing20):
        res = cascade_merge(SubBalls([3], [r[2] ** 2]), packing20)
        assert res.final.slots.tolist() == [1]
        assert res.final.radii[0] == r[2]

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
    @settings(max_examples=200)
    def test_matches_profile_and_brute_force(self, fr):
        areas = np.array(fr) * r[:len(fr)] ** 2
        if not areas.any():
            return
        res = cascade_merge(SubBalls(np.arange(1, len(fr) + 1), areas))
        brute, _ = canonical_minimum(math.fsum(areas), r[:len(fr)] ** 2)
        assert res.perimeter == pytest.approx(2 * c * math.pi * brute, rel=1e-12)
        assert res.perimeter == pytest.approx(Profile()(c * math.pi * math.fsum(areas)), rel=1e-12)
        assert res.mass_drift() <= 1e-12
        assert res.monotone()
        # at most one partial ball, and the full ones form a prefix
        a = res.steps[-1].areas
        full = np.isclose(a, r[:len(a)] ** 2, rtol=1e-13)
        partial = (~full) & (a > 0)
        assert partial.sum() <= 1
        nz = np.flatnonzero(a > 0)
        assert np.all(full[: nz[-1]])

    def test_tiny_mass_is_not_rounded_away(self):
        best, (full, partial) = canonical_minimum(1e-18, r[:3] ** 2)
        assert best == pytest.approx(1e-9, rel=1e-15)
        assert full == () and partial == 1

    def test_exhaustive_two_balls(self):
        audit = exhaustive_cascade_check(2, 16)
        assert audit.n_cases == 17 ** 2 - 1
        assert audit.passed


def test_optimality_identity_on_random_vectors():
    rng = np.random.default_rng(7)
    prof = Profile()
    r8 = dyadic_radii(8)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        areas = rng.random(n) * r8[:n] ** 2
        res = cascade_merge(schwarz_rearrange(VolumeVector(c * math.pi * areas),
                                              BallSystem(np.zeros((n, 2)), r8[:n])))
        assert res.perimeter == pytest.approx(prof(c * math.pi * math.fsum(areas)), rel=1e-12)


class TestTwoBallMove:
    @given(st.floats(0.01, 1), st.floats(0.01, 1), st.floats(0.01, 0.99))
    def test_lowers_perimeter(self, R, rr, frac):
        R, rr = max(R, rr), min(R, rr)
        grown, shrunk, delta = two_ball_move(R, rr, frac * rr)
        assert delta < 0
        assert grown ** 2 + shrunk ** 2 == pytest.approx(R ** 2 + rr ** 2, rel=1e-12)

    def test_random_triples_strict(self):
        rng = np.random.default_rng(11)
        for _ in range(10_000):
            R, rr = sorted(rng.uniform(0.01, 1, 2), reverse=True)
            _, _, delta = two_ball_move(R, rr, rng.uniform(1e-3, 0.999) * rr)
            assert delta < 0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            two_ball_move(0.1, 0.2, 0.05)


class TestProfileBound:
    def test_concentric_half_ball_is_tight(self, W20):
        rep = profile_lower_bound_volumes(VolumeVector([c * math.pi / 256]), W20)
        assert rep.lhs == pytest.approx(c * math.pi / 8, rel=1e-15)
        assert rep.rhs == pytest.approx(c * math.pi / 8, rel=1e-15)
        assert rep.passed

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
    def test_bound_holds(self, fr):
        from isoworkbench.construction import WeightedTorus, BallSystem
        W = WeightedTorus(BallSystem(np.zeros((8, 2)), dyadic_radii(8)))
        rep = profile_lower_bound_volumes(VolumeVector.from_fractions(fr, W), W)
        assert rep.margin >= -rep.error_bound
