"""Greedy dyadic ball packing on the torus, the weighted measure and its profile.

Ball ``i`` (1-based) has radius ``r_i = 2**(-i-2)``.  Inside the balls the
measure has density ``c = 1 / (1024 pi^2)``, elsewhere density 1.  Balls beyond
the explicit count ``n`` are never placed; their total mass and perimeter are
carried as closed-form geometric tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import numpy as np

from .torus import (Ball, BallUnionComplement, Region, RasterMask, TorusPoint, WholeTorus,
                    as_point, cell_centers, det_sum, dist_to_ball_union, torus_distance,
                    translates)

C_DEFAULT = 1.0 / (1024.0 * math.pi ** 2)
# branches beyond this index change phi by less than 2**-62 relative
K_MAX = 60


def dyadic_radius(i: int) -> float:
    if i < 1:
        raise ValueError("ball indices start at 1")
    return math.ldexp(1.0, -i - 2)


def dyadic_radii(n: int) -> np.ndarray:
    return np.array([dyadic_radius(i) for i in range(1, n + 1)])


class PackingError(RuntimeError):
    pass


@dataclass
class BallSystem:
    """Ordered centers ``x_1..x_n`` with radii ``2**(-i-2)``."""

    centers: np.ndarray
    radii: np.ndarray = None

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 2) % 1.0
        self.centers[self.centers >= 1.0] = 0.0
        if self.radii is None:
            self.radii = dyadic_radii(len(self.centers))
        self.radii = np.asarray(self.radii, dtype=float).ravel()
        if len(self.radii) != len(self.centers):
            raise ValueError("centers and radii differ in length")

    @property
    def n(self) -> int:
        return len(self.centers)

    def __len__(self):
        return self.n

    def point(self, i: int) -> TorusPoint:
        return TorusPoint(*self.centers[i - 1])

    def ball(self, i: int, closed: bool = False) -> Ball:
        return Ball(self.point(i), float(self.radii[i - 1]), closed=closed)

    def prefix(self, k: int) -> "BallSystem":
        return BallSystem(self.centers[:k].copy(), self.radii[:k].copy())

    def outside_closed_union(self) -> BallUnionComplement:
        return BallUnionComplement(self.centers, self.radii)

    def union_mask(self, G: int, n_balls: int | None = None) -> np.ndarray:
        """Cells whose center lies in one of the first ``n_balls`` open balls."""
        k = self.n if n_balls is None else min(n_balls, self.n)
        U, V = cell_centers(G)
        pts = np.stack([U, V], axis=-1)
        out = np.zeros((G, G), dtype=bool)
        for c, r in zip(self.centers[:k], self.radii[:k]):
            out |= torus_distance(pts, c) < r
        return out

    def label_grid(self, G: int, n_balls: int | None = None) -> np.ndarray:
        """Index (1-based) of the ball containing each cell center, 0 outside."""
        k = self.n if n_balls is None else min(n_balls, self.n)
        U, V = cell_centers(G)
        pts = np.stack([U, V], axis=-1)
        out = np.zeros((G, G), dtype=np.int32)
        for i, (c, r) in enumerate(zip(self.centers[:k], self.radii[:k]), start=1):
            out[torus_distance(pts, c) < r] = i
        return out

    def to_table(self) -> str:
        lines = ["# i u v r"]
        for i, ((u, v), r) in enumerate(zip(self.centers, self.radii), start=1):
            lines.append(f"{i} {u:.17g} {v:.17g} {r:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_table(cls, text: str) -> "BallSystem":
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            i, u, v, r = line.split()
            rows.append((int(i), float(u), float(v), float(r)))
        rows.sort()
        if [r[0] for r in rows] != list(range(1, len(rows) + 1)):
            raise ValueError("ball table indices must run 1..n")
        return cls(np.array([[u, v] for _, u, v, _ in rows]), np.array([r for *_, r in rows]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_table())

    @classmethod
    def load(cls, path) -> "BallSystem":
        return cls.from_table(Path(path).read_text())


# ---------------------------------------------------------------------------
# tails and profile constants

def tail_area(n: int) -> float:
    """Euclidean area of the balls with index > n: ``pi * 4**(-n-2) / 3``."""
    return math.pi * math.ldexp(1.0, -2 * n - 4) / 3.0


def tail_length(n: int) -> float:
    """Boundary length of the balls with index > n: ``2 pi 2**(-n-2)``."""
    return 2.0 * math.pi * math.ldexp(1.0, -n - 2)


@dataclass
class WeightedTorus:
    """The torus with density ``c`` on the union of the balls and 1 elsewhere."""

    balls: BallSystem
    interior_density: float = C_DEFAULT
    exterior_density: float = 1.0
    _rho_cache: dict = field(default_factory=dict, repr=False)

    @property
    def c(self) -> float:
        return self.interior_density

    @property
    def n(self) -> int:
        return self.balls.n

    @property
    def tail_mass(self) -> float:
        return self.c * tail_area(self.n)

    @property
    def tail_perimeter(self) -> float:
        return self.c * tail_length(self.n)

    @property
    def mass_U(self) -> float:
        """Mass of the full (infinite) union: ``c pi / 48``."""
        return self.c * math.pi / 48.0

    @property
    def per_U(self) -> float:
        return self.c * math.pi / 2.0

    def density_grid(self, G: int, n_balls: int | None = None) -> np.ndarray:
        key = (G, n_balls)
        if key not in self._rho_cache:
            inside = self.balls.union_mask(G, n_balls)
            self._rho_cache[key] = np.where(inside, self.c, self.exterior_density)
        return self._rho_cache[key]

    def density_at(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        d = dist_to_ball_union(pts, self.balls.centers, self.balls.radii)
        return np.where(np.asarray(d) < 0, self.c, self.exterior_density)


def uniform_torus() -> WeightedTorus:
    """Density 1 everywhere (the plain flat torus)."""
    return WeightedTorus(BallSystem(np.zeros((0, 2))), interior_density=1.0)


# ---------------------------------------------------------------------------
# measure

def lens_area(r1: float, r2: float, d: float) -> float:
    """Area of the intersection of two planar disks at center distance ``d``."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return math.pi * min(r1, r2) ** 2
    a1 = r1 * r1 * math.acos((d * d + r1 * r1 - r2 * r2) / (2 * d * r1))
    a2 = r2 * r2 * math.acos((d * d + r2 * r2 - r1 * r1) / (2 * d * r2))
    k = 0.5 * math.sqrt((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2))
    return a1 + a2 - k


def _ball_area_on_torus(b: Ball) -> float:
    if b.radius > 0.5:
        raise ValueError("analytic ball measure needs radius <= 1/2 (no self-overlap)")
    return math.pi * b.radius ** 2


def _ball_overlap(b: Ball, center, radius) -> float:
    tr = translates([center])[0]
    return sum(lens_area(b.radius, radius, math.dist(b.center.as_array(), t)) for t in tr)


def measure_of(E, W: WeightedTorus, include_tail: bool = True) -> float:
    """Weighted mass ``int_E rho dH^2``.

    ``E`` may be a ``Ball``, a list of pairwise disjoint balls, the string
    ``"U"`` (union of all balls), ``WholeTorus``, ``BallUnionComplement`` of the
    system, a raster (bool array, ``RasterMask`` or ``RasterSet``).  Raster
    masses use the rasterized density of the explicit balls.
    """
    c = W.c
    tail = W.tail_mass if include_tail else 0.0
    if isinstance(E, str):
        if E != "U":
            raise ValueError(f"unknown symbolic region {E!r}")
        return det_sum(c * math.pi * W.balls.radii ** 2) + tail
    if isinstance(E, WholeTorus):
        area_U = det_sum(math.pi * W.balls.radii ** 2) + (tail_area(W.n) if include_tail else 0.0)
        return 1.0 - (1.0 - c) * area_U
    if isinstance(E, BallUnionComplement):
        return measure_of(WholeTorus(), W, include_tail) - measure_of("U", W, include_tail)
    if isinstance(E, Ball):
        return _measure_ball(E, W)
    if isinstance(E, (list, tuple)):
        balls = list(E)
        for a, b in combinations(balls, 2):
            if torus_distance(a.center, b.center) <= a.radius + b.radius:
                raise ValueError("analytic ball inputs overlap; use a raster instead")
        return math.fsum(_measure_ball(b, W) for b in balls)
    mask = _as_mask(E)
    G = mask.shape[0]
    rho = W.density_grid(G)
    return det_sum(np.where(mask, rho, 0.0)) / G ** 2


def _measure_ball(b: Ball, W: WeightedTorus) -> float:
    area = _ball_area_on_torus(b)
    inside = math.fsum(_ball_overlap(b, cc, r) for cc, r in zip(W.balls.centers, W.balls.radii))
    return area - (1.0 - W.c) * inside


def _as_mask(E) -> np.ndarray:
    if isinstance(E, RasterMask):
        return E.occupancy
    occ = getattr(E, "occupancy", None)
    if occ is not None:
        return np.asarray(occ, dtype=bool)
    arr = np.asarray(E)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise TypeError(f"cannot interpret {type(E).__name__} as a region")
    return arr.astype(bool)


# ---------------------------------------------------------------------------
# isoperimetric profile

def _partial_sums():
    s1, s2 = [Fraction(0)], [Fraction(0)]
    for i in range(1, K_MAX + 1):
        r = Fraction(1, 2 ** (i + 2))
        s1.append(s1[-1] + r)
        s2.append(s2[-1] + r * r)
    return np.array([float(x) for x in s1]), np.array([float(x) for x in s2])


SUM_R, SUM_R2 = _partial_sums()


@dataclass(frozen=True)
class ProfileSample:
    t: float
    phi: float
    k_t: int


class Profile:
    """Profile ``phi`` of the ball family for interior density ``c``.

    Branch ``k`` covers masses in ``(M_k, M_{k+1}]`` with ``M_k = c pi sum_{i<=k} r_i^2``;
    there the first ``k`` balls are full and ball ``k+1`` holds the remainder.
    """

    def __init__(self, c: float = C_DEFAULT):
        self.c = c
        self.cpi = c * math.pi
        self.branch_mass = self.cpi * SUM_R2
        self.branch_per = 2.0 * self.cpi * SUM_R
        self.mass_U = self.cpi / 48.0
        self.per_U = self.cpi / 2.0

    def branch_index(self, t):
        return np.clip(np.searchsorted(self.branch_mass, t, side="left") - 1, 0, K_MAX)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        ulp = np.spacing(self.mass_U)
        if np.any(t < -ulp) or np.any(t > self.mass_U + ulp):
            raise ValueError(f"profile argument outside [0, m(U)] = [0, {self.mass_U:.6g}]")
        t = np.clip(t, 0.0, self.mass_U)
        k = self.branch_index(t)
        # 2 c pi sqrt(rem / (c pi)) without dividing tiny masses into subnormals
        rem = np.maximum(t - self.branch_mass[k], 0.0)
        out = self.branch_per[k] + 2.0 * math.sqrt(self.cpi) * np.sqrt(rem)
        out = np.where(t <= 0.0, 0.0, out)
        out = np.where(t >= self.mass_U, self.per_U, out)
        return float(out) if out.ndim == 0 else out

    def branch_jump(self, k: int) -> float:
        """Relative gap at ``M_k`` between branch ``k - 1`` run to its end and branch ``k``."""
        left = self.branch_per[k - 1] + 2.0 * self.cpi * math.sqrt(
            (self.branch_mass[k] - self.branch_mass[k - 1]) / self.cpi)
        return abs(left - self.branch_per[k]) / self.branch_per[k]

    def sample(self, t: float) -> ProfileSample:
        t = float(t)
        phi = self(t)
        k = int(self.branch_index(min(max(t, 0.0), self.mass_U)))
        return ProfileSample(t, phi, k)


def profile_phi(t: float, W: WeightedTorus | None = None) -> ProfileSample:
    return Profile(C_DEFAULT if W is None else W.c).sample(t)


def gap_margin(t, c: float = C_DEFAULT):
    """``phi(t) + sqrt(m(U) - t) / (4 sqrt(pi)) - phi(m(U))``."""
    prof = Profile(c)
    t = np.asarray(t, dtype=float)
    return prof(t) + np.sqrt(np.maximum(prof.mass_U - t, 0.0)) / (4.0 * math.sqrt(math.pi)) - prof.per_U


@dataclass
class GapReport:
    n_samples: int
    min_margin: float
    argmin_t: float
    passed: bool
    samples: np.ndarray = field(repr=False)
    margins: np.ndarray = field(repr=False)


def phi_gap_samples(n_samples: int, c: float = C_DEFAULT, n_branches: int = 20) -> np.ndarray:
    prof = Profile(c)
    mU = prof.mass_U
    base = mU * (np.arange(1, n_samples + 1) - 0.5) / n_samples
    near = [mU * 1e-9, mU * (1 - 1e-9), mU * 1e-12, mU * (1 - 1e-12)]
    for k in range(1, n_branches + 1):
        m = prof.branch_mass[k]
        eps = m * 1e-9
        near += [m - eps, m, m + eps]
    t = np.concatenate([base, near])
    return np.unique(t[(t > 0) & (t < mU)])


def verify_phi_gap(n_samples: int = 10_000, c: float = C_DEFAULT) -> GapReport:
    if n_samples < 1:
        raise ValueError("need at least one sample")
    t = phi_gap_samples(n_samples, c)
    m = gap_margin(t, c)
    i = int(np.argmin(m))
    return GapReport(len(t), float(m[i]), float(t[i]), bool(np.all(m > 0)), t, m)


# ---------------------------------------------------------------------------
# packing

@dataclass(frozen=True)
class SearchParams:
    grid_pitch: float = 1.0 / 256
    tie_tol: float = 1e-12


def _grid_scan(centers, radii, P: int):
    g = np.arange(P) / P
    U, V = np.meshgrid(g, g, indexing="ij")
    vals = dist_to_ball_union(np.stack([U, V], axis=-1), centers, radii)
    return U, V, vals


def _apollonius_candidates(circ_c, circ_r, t_cap):
    """Points at equal signed distance ``t`` from three circles (outer tangency)."""
    n = len(circ_c)
    dist = np.linalg.norm(circ_c[:, None, :] - circ_c[None, :, :], axis=-1)
    close = dist <= circ_r[:, None] + circ_r[None, :] + 2 * t_cap + 1e-12
    pts, vals = [], []
    idx = np.arange(n)
    for a in range(n):
        nb = idx[(idx > a) & close[a]]
        if len(nb) < 2:
            continue
        bb, cc = np.meshgrid(nb, nb, indexing="ij")
        sel = bb < cc
        bb, cc = bb[sel], cc[sel]
        sel = close[bb, cc]
        bb, cc = bb[sel], cc[sel]
        if len(bb) == 0:
            continue
        c1, r1 = circ_c[a], circ_r[a]
        c2, r2 = circ_c[bb], circ_r[bb]
        c3, r3 = circ_c[cc], circ_r[cc]
        # 2 (c_j - c_1) . p = |c_j|^2 - |c_1|^2 - r_j^2 + r_1^2 + 2 t (r_1 - r_j)
        m11, m12 = 2 * (c2[:, 0] - c1[0]), 2 * (c2[:, 1] - c1[1])
        m21, m22 = 2 * (c3[:, 0] - c1[0]), 2 * (c3[:, 1] - c1[1])
        det = m11 * m22 - m12 * m21
        ok = np.abs(det) > 1e-14
        if not np.any(ok):
            continue
        m11, m12, m21, m22, det = m11[ok], m12[ok], m21[ok], m22[ok], det[ok]
        c2, r2, c3, r3 = c2[ok], r2[ok], c3[ok], r3[ok]
        s1 = c1 @ c1
        b0 = np.stack([(c2 ** 2).sum(1) - s1 - r2 ** 2 + r1 ** 2,
                       (c3 ** 2).sum(1) - s1 - r3 ** 2 + r1 ** 2], axis=1)
        b1 = np.stack([2 * (r1 - r2), 2 * (r1 - r3)], axis=1)
        A = np.stack([(m22 * b0[:, 0] - m12 * b0[:, 1]) / det,
                      (-m21 * b0[:, 0] + m11 * b0[:, 1]) / det], axis=1)
        B = np.stack([(m22 * b1[:, 0] - m12 * b1[:, 1]) / det,
                      (-m21 * b1[:, 0] + m11 * b1[:, 1]) / det], axis=1)
        D = A - c1
        qa = (B ** 2).sum(1) - 1.0
        qb = 2 * ((D * B).sum(1) - r1)
        qc = (D ** 2).sum(1) - r1 ** 2
        for sign in (1.0, -1.0):
            with np.errstate(invalid="ignore", divide="ignore"):
                disc = qb ** 2 - 4 * qa * qc
                lin = np.abs(qa) < 1e-14
                root = np.where(lin, -qc / qb, (-qb + sign * np.sqrt(disc)) / (2 * qa))
            good = np.isfinite(root) & (root > 0) & (root <= t_cap + 1e-9)
            if np.any(good):
                pts.append(A[good] + B[good] * root[good, None])
                vals.append(root[good])
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(vals)


def _lex_best(points, values, tol):
    """Index of the best value; near-ties resolved by smallest (u, v)."""
    vmax = values.max()
    cand = np.flatnonzero(values >= vmax - tol)
    order = np.lexsort((points[cand, 1], points[cand, 0]))
    return cand[order[0]]


def next_center(centers, radii, search: SearchParams = SearchParams()):
    """Global maximizer of the signed distance to the current ball union.

    The maximum of ``min_i (d(p, x_i) - r_i)`` sits at a vertex of the additively
    weighted Voronoi diagram of the periodic ball translates.  A grid scan gives
    an upper bound on the optimum that prunes the vertex enumeration and a lower
    bound that certifies it.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.asarray(radii, dtype=float)
    P = int(round(1.0 / search.grid_pitch))
    U, V, vals = _grid_scan(centers, radii, P)
    flat = vals.ravel()
    grid_pts = np.stack([U.ravel(), V.ravel()], axis=1)
    gi = _lex_best(grid_pts, flat, search.tie_tol)
    grid_best = float(flat[gi])
    upper = grid_best + math.sqrt(0.5) / P

    circ_c = translates(centers).reshape(-1, 2)
    circ_r = np.repeat(radii, 9)
    cand, _ = _apollonius_candidates(circ_c, circ_r, upper)
    cand = cand % 1.0
    cand[cand >= 1.0] = 0.0
    cand = np.concatenate([cand, grid_pts[gi][None, :]])
    true_vals = dist_to_ball_union(cand, centers, radii)
    bi = _lex_best(cand, true_vals, search.tie_tol)
    best, value = cand[bi], float(true_vals[bi])
    if value < grid_best - 1e-12:  # pragma: no cover - enumeration is exhaustive
        best, value = grid_pts[gi], grid_best
    return best, value, {"grid_best": grid_best, "upper_bound": upper,
                         "n_candidates": int(len(cand))}


def build_packing(n: int, x1=(0.0, 0.0), search: SearchParams = SearchParams(),
                  certify: bool = True) -> BallSystem:
    """Greedy packing: each new center maximizes the distance to the previous balls."""
    if n < 1:
        raise ValueError("need at least one ball")
    radii = dyadic_radii(n)
    centers = [as_point(x1).as_array()]
    for k in range(1, n):
        x, val, info = next_center(np.array(centers), radii[:k], search)
        if certify and not val >= 2 * radii[k]:
            raise PackingError(
                f"ball {k + 1}: best value {val:.6g} < 2 r_{k + 1} = {2 * radii[k]:.6g};"
                f" grid pitch {search.grid_pitch:g} may be too coarse")
        centers.append(x)
    return BallSystem(np.array(centers), radii)


def covering_radius(B: BallSystem, search: SearchParams = SearchParams()) -> float:
    """Largest signed distance to the explicit balls (how far ``U`` is from dense)."""
    return next_center(B.centers, B.radii, search)[1]


@dataclass
class SeparationEntry:
    k: int
    delta: float
    bound: float
    disjoint_margin: float
    passed: bool


@dataclass
class SeparationReport:
    entries: list

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def min_ratio(self) -> float:
        return min((e.delta / e.bound for e in self.entries), default=math.inf)


def verify_separation(B: BallSystem) -> SeparationReport:
    """Check ``dist(x_k, B_1 u ... u B_{k-1}) >= 2 r_k`` for every ``k >= 2``."""
    entries = []
    for k in range(2, B.n + 1):
        xk = B.centers[k - 1]
        d = torus_distance(B.centers[: k - 1], xk)
        d = np.atleast_1d(d)
        delta = float(np.min(d - B.radii[: k - 1]))
        disjoint = float(np.min(d - B.radii[: k - 1] - B.radii[k - 1]))
        bound = 2 * float(B.radii[k - 1])
        entries.append(SeparationEntry(k, delta, bound, disjoint,
                                       bool(delta >= bound and disjoint > 0)))
    return SeparationReport(entries)


def region_measure_bound(E: Region, W: WeightedTorus) -> float:
    """Worst-case error of an analytic measure due to the omitted tail balls."""
    if isinstance(E, Ball):
        return (1.0 - W.c) * tail_area(W.n)
    return 0.0
