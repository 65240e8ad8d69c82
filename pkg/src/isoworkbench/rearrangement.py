"""Rearrangement of sets inside the ball family.

Masses inside ball ``i`` are handled in area units ``a = v / (c pi)``, so a
concentric sub-ball of mass ``v`` has squared radius ``a`` and boundary length
``2 pi sqrt(a)``.  With dyadic inputs every area in the cascade is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .construction import (C_DEFAULT, BallSystem, Profile, WeightedTorus, dyadic_radii)


@dataclass
class VolumeVector:
    """Masses ``v_i = m(E cap B_i)`` of a set inside each explicit ball."""

    v: np.ndarray
    tail: float = 0.0

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float).ravel()
        if np.any(self.v < 0) or self.tail < 0:
            raise ValueError("masses are nonnegative")

    @property
    def total(self) -> float:
        return math.fsum(self.v) + self.tail

    def validate(self, W: WeightedTorus) -> None:
        cap = W.c * math.pi * W.balls.radii[:len(self.v)] ** 2
        if len(self.v) > W.n:
            raise ValueError(f"{len(self.v)} masses for {W.n} balls")
        bad = np.flatnonzero(self.v > cap)
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"v_{i + 1} = {self.v[i]:.6g} exceeds m(B_{i + 1}) = {cap[i]:.6g}")
        if self.tail > W.tail_mass:
            raise ValueError("tail mass exceeds the truncated tail")

    @classmethod
    def from_fractions(cls, fractions, W: WeightedTorus) -> "VolumeVector":
        f = np.asarray(fractions, dtype=float)
        return cls(f * W.c * math.pi * W.balls.radii[:len(f)] ** 2)


@dataclass
class SubBalls:
    """Concentric sub-balls: ``slots[k]`` is the (1-based) ball hosting ``areas[k] = radius**2``."""

    slots: np.ndarray
    areas: np.ndarray
    c: float = C_DEFAULT

    def __post_init__(self):
        self.slots = np.asarray(self.slots, dtype=int).ravel()
        self.areas = np.asarray(self.areas, dtype=float).ravel()

    @property
    def radii(self) -> np.ndarray:
        return np.sqrt(self.areas)

    @property
    def mass(self) -> float:
        return self.c * math.pi * math.fsum(self.areas)

    @property
    def perimeter(self) -> float:
        return 2.0 * self.c * math.pi * math.fsum(np.sqrt(self.areas))

    def nonempty(self) -> "SubBalls":
        keep = self.areas > 0
        return SubBalls(self.slots[keep], self.areas[keep], self.c)

    def as_ball_system(self, B: BallSystem) -> BallSystem:
        s = self.nonempty()
        return BallSystem(B.centers[s.slots - 1], s.radii)


def schwarz_rearrange(v: VolumeVector, B: BallSystem, c: float = C_DEFAULT) -> SubBalls:
    """Replace the part of a set inside each ball by the concentric ball of equal mass."""
    if len(v.v) > B.n:
        raise ValueError(f"{len(v.v)} masses for {B.n} balls")
    caps = B.radii[:len(v.v)] ** 2
    areas = v.v / (c * math.pi)
    # allow the rounding of v = c pi r^2 itself
    over = areas > caps * (1 + 4 * np.finfo(float).eps)
    if np.any(over):
        i = int(np.flatnonzero(over)[0])
        raise ValueError(f"v_{i + 1} exceeds m(B_{i + 1})")
    areas = np.minimum(areas, caps)
    return SubBalls(np.arange(1, len(areas) + 1), areas, c).nonempty()


@dataclass
class CascadeStep:
    areas: np.ndarray
    mass: float
    perimeter: float
    move: tuple = ()


@dataclass
class CascadeResult:
    final: SubBalls
    steps: list = field(default_factory=list)

    @property
    def perimeter(self) -> float:
        return self.final.perimeter

    @property
    def mass(self) -> float:
        return self.final.mass

    def mass_drift(self) -> float:
        m = np.array([s.mass for s in self.steps])
        return float(np.max(np.abs(m - m[0])) / m[0]) if len(m) and m[0] > 0 else 0.0

    def monotone(self, rtol: float = 1e-12) -> bool:
        p = [s.perimeter for s in self.steps]
        return all(b <= a * (1 + rtol) for a, b in zip(p, p[1:]))


def _area_perimeter(areas, c):
    return 2.0 * c * math.pi * math.fsum(np.sqrt(areas))


def cascade_merge(sub: SubBalls, B: BallSystem | None = None) -> CascadeResult:
    """Merge concentric sub-balls into full balls ``B_1..B_{j-1}`` plus one partial ball.

    First the volumes are sorted in decreasing order and reassigned to
    ``B_1, B_2, ...``; the ``k``-th largest volume always fits in ``B_k``.  Then
    area moves from the smallest nonempty ball to the largest non-full one
    until at most one ball is partial.  Each move grows the larger of two balls
    at the expense of the smaller, which strictly lowers the total boundary
    length by concavity of the square root.
    """
    c = sub.c
    vols = np.sort(sub.nonempty().areas)[::-1]
    n = len(vols)
    caps = (B.radii[:n] ** 2) if B is not None else dyadic_radii(n) ** 2
    if B is not None and B.n < n:
        raise ValueError("more sub-balls than host balls")
    a = vols.copy()
    steps = [CascadeStep(a.copy(), c * math.pi * math.fsum(a), _area_perimeter(a, c), ("sort",))]
    while True:
        nonfull = np.flatnonzero(a < caps)
        nonempty = np.flatnonzero(a > 0)
        if len(nonfull) == 0 or len(nonempty) == 0:
            break
        L, S = int(nonfull[0]), int(nonempty[-1])
        if S <= L:
            break
        moved = min(caps[L] - a[L], a[S])
        a[L] += moved
        a[S] -= moved
        # the transfer either fills L or empties S; snap the other exactly
        if a[L] >= caps[L] or caps[L] - a[L] <= 4 * np.spacing(caps[L]):
            a[S] += a[L] - caps[L]
            a[L] = caps[L]
        if a[S] <= 4 * np.spacing(caps[L]):
            a[S] = 0.0
        steps.append(CascadeStep(a.copy(), c * math.pi * math.fsum(a), _area_perimeter(a, c),
                                 ("move", S + 1, L + 1, moved)))
    final = SubBalls(np.arange(1, n + 1), a, c).nonempty()
    return CascadeResult(final, steps)


def canonical_minimum(total_area: float, caps) -> tuple[float, tuple]:
    """Brute force over every full-set-plus-one-partial-ball placement.

    Returns ``(min sum of radii, (full indices, partial index))`` among
    configurations of the given total area; indices are 1-based.
    """
    caps = np.asarray(caps, dtype=float)
    n = len(caps)
    best, arg = math.inf, None
    for full in product((0, 1), repeat=n):
        fa = math.fsum(caps[i] for i in range(n) if full[i])
        rest = total_area - fa
        # only the subtraction rounds, so the slack scales with the full area
        tol = 8 * np.finfo(float).eps * fa
        if rest < -tol:
            continue
        rest = max(rest, 0.0)
        base = math.fsum(math.sqrt(caps[i]) for i in range(n) if full[i])
        fidx = tuple(i + 1 for i in range(n) if full[i])
        if rest <= tol:
            if base < best:
                best, arg = base, (fidx, None)
            continue
        for p in range(n):
            if not full[p] and rest <= caps[p] + tol:
                val = base + math.sqrt(min(rest, caps[p]))
                if val < best:
                    best, arg = val, (fidx, p + 1)
    return best, arg


def two_ball_move(R: float, r: float, s: float):
    """Shrink ``B(y, r)`` to radius ``r - s`` and grow ``B(x, R)`` by the same area.

    Returns ``(R + t, r - s, change in total boundary length)``.
    """
    if not (0 < s < r <= R):
        raise ValueError("need 0 < s < r <= R")
    moved = r * r - (r - s) ** 2
    grown = math.sqrt(R * R + moved)
    delta = 2 * math.pi * ((grown - R) - s)
    return grown, r - s, delta


# ---------------------------------------------------------------------------
# lower bound by the profile

@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    margin: float
    error_bound: float
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.margin >= -self.error_bound

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                "error_bound": self.error_bound, "passed": self.passed, **self.notes}


def profile_lower_bound_volumes(v: VolumeVector, W: WeightedTorus) -> BoundReport:
    """``Per`` of the Schwarz rearrangement against ``phi`` of the total mass."""
    v.validate(W)
    sub = schwarz_rearrange(v, W.balls, W.c)
    prof = Profile(W.c)
    t = min(v.total, prof.mass_U)
    lhs = sub.perimeter + (W.c * 2 * math.pi * math.sqrt(v.tail / (W.c * math.pi)) if v.tail else 0.0)
    rhs = prof(t)
    # an area a = v / (c pi) in the subnormal range is off by up to one step, moving 2 c pi sqrt(a)
    # by c pi step / sqrt(a)
    a = sub.areas[sub.areas > 0]
    tiny = np.finfo(float).smallest_subnormal * float(np.sum(1.0 / np.sqrt(a))) * W.c * math.pi
    return BoundReport("per-inside-U", lhs, rhs, lhs - rhs, 4 * np.spacing(max(lhs, rhs)) + tiny,
                       {"mass": v.total})


@dataclass
class CascadeAudit:
    n_cases: int
    worst_vs_brute: float       # relative gap, cascade against brute-force minimum
    worst_vs_profile: float     # relative gap, cascade against phi(total mass)
    max_mass_drift: float
    all_monotone: bool
    worst_case: tuple = ()

    @property
    def passed(self) -> bool:
        return (self.worst_vs_brute <= 1e-12 and self.worst_vs_profile <= 1e-12
                and self.max_mass_drift <= 1e-12 and self.all_monotone)


def exhaustive_cascade_check(n_balls: int = 3, levels: int = 16, c: float = C_DEFAULT) -> CascadeAudit:
    """Run the cascade on every volume vector with ``v_i = (q_i / levels) m(B_i)``, ``q_i = 0..levels``."""
    radii = dyadic_radii(n_balls)
    caps = radii ** 2
    B = BallSystem(np.zeros((n_balls, 2)), radii)
    prof = Profile(c)
    worst_b = worst_p = drift = 0.0
    mono = True
    worst_case = ()
    n = 0
    for q in product(range(levels + 1), repeat=n_balls):
        areas = np.array(q, dtype=float) / levels * caps
        if not areas.any():
            continue
        n += 1
        v = VolumeVector(c * math.pi * areas)
        res = cascade_merge(schwarz_rearrange(v, B, c), B)
        brute, _ = canonical_minimum(math.fsum(areas), caps)
        per = res.perimeter
        rb = abs(per - 2 * c * math.pi * brute) / per
        rp = abs(per - prof(v.total)) / per
        if max(rb, rp) > max(worst_b, worst_p):
            worst_case = q
        worst_b, worst_p = max(worst_b, rb), max(worst_p, rp)
        drift = max(drift, res.mass_drift())
        mono &= res.monotone()
    return CascadeAudit(n, worst_b, worst_p, drift, mono, worst_case)
