"""Flat torus geometry, periodic scalar fields and slope estimation.

The torus is the unit square with opposite sides glued.  Fields are sampled at
cell centers ``((i + 0.5) h, (j + 0.5) h)`` with ``h = 1 / G``; the first array
axis is the ``u`` coordinate and the second one is ``v``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TORUS_DIAMETER = math.sqrt(2.0) / 2.0
MIN_VERIFY_GRID = 8


def det_sum(values) -> float:
    """Correctly rounded sum, independent of summation order."""
    arr = np.asarray(values, dtype=float)
    return math.fsum(arr.ravel().tolist())


def _canonical(x: float) -> float:
    y = float(x) % 1.0
    # -1e-18 % 1.0 rounds to 1.0
    return 0.0 if y >= 1.0 else y


@dataclass(frozen=True)
class TorusPoint:
    u: float
    v: float

    def __post_init__(self):
        object.__setattr__(self, "u", _canonical(self.u))
        object.__setattr__(self, "v", _canonical(self.v))

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])

    def __iter__(self):
        yield self.u
        yield self.v


def as_point(p) -> TorusPoint:
    if isinstance(p, TorusPoint):
        return p
    u, v = p
    return TorusPoint(u, v)


def wrap_delta(d):
    """Shortest signed representative of a coordinate difference, in [-1/2, 1/2)."""
    d = np.asarray(d, dtype=float)
    return d - np.floor(d + 0.5)


def torus_distance(p, q):
    """Geodesic distance on the flat torus.

    Accepts ``TorusPoint`` instances or array-likes whose last axis has length 2;
    broadcasting applies.
    """
    if isinstance(p, TorusPoint):
        p = p.as_array()
    if isinstance(q, TorusPoint):
        q = q.as_array()
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    du = np.abs(p[..., 0] - q[..., 0]) % 1.0
    dv = np.abs(p[..., 1] - q[..., 1]) % 1.0
    du = np.minimum(du, 1.0 - du)
    dv = np.minimum(dv, 1.0 - dv)
    out = np.hypot(du, dv)
    return float(out) if out.ndim == 0 else out


def cell_centers(G: int):
    """Return the ``(u, v)`` coordinate grids of cell centers, each of shape (G, G)."""
    c = (np.arange(G) + 0.5) / G
    return np.meshgrid(c, c, indexing="ij")


@dataclass
class ScalarField:
    """Periodic field sampled at the G x G cell centers."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"field must be a square grid, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def G(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.G

    def evaluate(self, points) -> np.ndarray:
        """Periodic bilinear interpolation at arbitrary torus points."""
        pts = np.asarray(points, dtype=float)
        G = self.G
        gu = pts[..., 0] * G - 0.5
        gv = pts[..., 1] * G - 0.5
        i0 = np.floor(gu).astype(int)
        j0 = np.floor(gv).astype(int)
        tu = gu - i0
        tv = gv - j0
        i0 %= G
        j0 %= G
        i1 = (i0 + 1) % G
        j1 = (j0 + 1) % G
        f = self.values
        return ((1 - tu) * (1 - tv) * f[i0, j0] + tu * (1 - tv) * f[i1, j0]
                + (1 - tu) * tv * f[i0, j1] + tu * tv * f[i1, j1])

    def integrate(self, density=None) -> float:
        """Cell-center quadrature of the field against ``density * dH^2``."""
        vals = self.values if density is None else self.values * density
        return det_sum(vals) * self.h ** 2

    def __add__(self, other):
        return ScalarField(self.values + _vals(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.values - _vals(other))

    def __mul__(self, other):
        return ScalarField(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(-self.values)

    def map(self, fn) -> "ScalarField":
        return ScalarField(fn(self.values))


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


def check_grid(G: int, minimum: int = 2) -> int:
    if int(G) != G or G < minimum:
        raise ValueError(f"grid resolution must be an integer >= {minimum}, got {G}")
    return int(G)


def distance_field(x, G: int) -> ScalarField:
    """Sample ``d(x, .)`` at cell centers."""
    G = check_grid(G)
    U, V = cell_centers(G)
    x = as_point(x)
    return ScalarField(torus_distance(np.stack([U, V], axis=-1), x.as_array()))


def dist_to_ball_union(p, centers, radii):
    """Signed distance ``min_i (d(p, x_i) - r_i)`` to a finite union of balls.

    ``p`` may be a single point or an array of points with trailing axis 2.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.asarray(radii, dtype=float).ravel()
    if len(centers) == 0:
        raise ValueError("ball system is empty")
    if isinstance(p, TorusPoint):
        p = p.as_array()
    p = np.asarray(p, dtype=float)
    best = None
    for c, r in zip(centers, radii):
        d = torus_distance(p, c) - r
        best = d if best is None else np.minimum(best, d)
    return float(best) if np.ndim(best) == 0 else best


# ---------------------------------------------------------------------------
# slope estimation

@dataclass(frozen=True)
class RingStencil:
    """Neighbors at distance ``radius`` in ``n_dirs`` evenly spaced directions.

    Values off the grid are obtained by periodic bilinear interpolation, which
    is a fixed linear combination of four rolled copies of the field.
    """

    G: int
    radius: float
    n_dirs: int = 32
    _taps: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        h = 1.0 / self.G
        if self.radius < h * (1 - 1e-12):
            raise ValueError(
                f"stencil radius {self.radius:g} is below one grid spacing ({h:g})")
        if self.radius >= 0.5:
            raise ValueError("stencil radius must stay below 1/2")
        if self.n_dirs < 4:
            raise ValueError("need at least 4 stencil directions")
        taps = []
        for k in range(self.n_dirs):
            th = 2 * math.pi * k / self.n_dirs
            du = round(self.radius * math.cos(th) * self.G, 12)
            dv = round(self.radius * math.sin(th) * self.G, 12)
            i0, j0 = math.floor(du), math.floor(dv)
            tu, tv = du - i0, dv - j0
            terms = []
            for di, dj, w in ((0, 0, (1 - tu) * (1 - tv)), (1, 0, tu * (1 - tv)),
                              (0, 1, (1 - tu) * tv), (1, 1, tu * tv)):
                if w != 0.0:
                    terms.append((i0 + di, j0 + dj, w))
            taps.append(tuple(terms))
        object.__setattr__(self, "_taps", tuple(taps))

    @property
    def h(self) -> float:
        return 1.0 / self.G

    @property
    def angular_gap(self) -> float:
        return 2 * math.pi / self.n_dirs

    def shifted(self, values: np.ndarray, k: int) -> np.ndarray:
        """Field values at ``x + delta_k`` for every cell ``x``."""
        out = None
        for di, dj, w in self._taps[k]:
            term = w * np.roll(values, shift=(-di, -dj), axis=(0, 1))
            out = term if out is None else out + term
        return out

    def difference(self, values: np.ndarray, k: int) -> np.ndarray:
        """``f(x + delta_k) - f(x)`` as a weighted sum of tap differences (exactly 0 on constants)."""
        out = None
        for di, dj, w in self._taps[k]:
            term = w * (np.roll(values, shift=(-di, -dj), axis=(0, 1)) - values)
            out = term if out is None else out + term
        return out

    def quotients(self, values: np.ndarray):
        """Yield signed difference quotients ``(f(x + delta_k) - f(x)) / radius``."""
        for k in range(self.n_dirs):
            yield self.difference(values, k) / self.radius


def default_stencil(G: int, spacings: float = 1.0, n_dirs: int = 32) -> RingStencil:
    return RingStencil(G, spacings / G, n_dirs)


def slope_field(f: ScalarField, stencil_radius: float | None = None,
                n_dirs: int = 32, stencil: RingStencil | None = None) -> ScalarField:
    """Finite-stencil slope: max of ``|f(x) - f(y)| / d(x, y)`` over ring neighbors.

    The estimate is biased low by at most a factor ``cos(pi / n_dirs)`` for
    linear functions and carries an ``O(radius)`` curvature term otherwise.
    """
    if stencil is None:
        stencil = RingStencil(f.G, f.h if stencil_radius is None else stencil_radius, n_dirs)
    elif stencil.G != f.G:
        raise ValueError("stencil and field resolutions differ")
    out = np.zeros_like(f.values)
    for q in stencil.quotients(f.values):
        np.maximum(out, np.abs(q), out=out)
    return ScalarField(out)


def lipschitz_bound(f: ScalarField, stencil: RingStencil | None = None) -> float:
    return float(slope_field(f, stencil=stencil or default_stencil(f.G)).values.max())


def second_difference_bound(f: ScalarField) -> float:
    """Max absolute second difference along the axes and diagonals, divided by the step squared."""
    v = f.values
    h = f.h
    out = 0.0
    for sh, step in (((1, 0), h), ((0, 1), h), ((1, 1), h * math.sqrt(2)), ((1, -1), h * math.sqrt(2))):
        d2 = np.roll(v, sh, axis=(0, 1)) - 2 * v + np.roll(v, (-sh[0], -sh[1]), axis=(0, 1))
        out = max(out, float(np.abs(d2).max()) / step ** 2)
    return out


# ---------------------------------------------------------------------------
# integration domains

class Region:
    """Integration domain on the torus; subclasses define point membership."""

    kind = "region"

    def contains(self, points) -> np.ndarray:
        raise NotImplementedError

    def mask(self, G: int) -> np.ndarray:
        U, V = cell_centers(G)
        return self.contains(np.stack([U, V], axis=-1))


class WholeTorus(Region):
    kind = "whole-torus"

    def contains(self, points):
        pts = np.asarray(points, dtype=float)
        return np.ones(pts.shape[:-1], dtype=bool)


@dataclass
class Ball(Region):
    center: TorusPoint
    radius: float
    closed: bool = False
    kind = "ball"

    def __post_init__(self):
        self.center = as_point(self.center)
        if not 0 < self.radius <= TORUS_DIAMETER:
            raise ValueError(f"ball radius must lie in (0, sqrt(2)/2], got {self.radius}")

    def contains(self, points):
        d = torus_distance(np.asarray(points, dtype=float), self.center.as_array())
        return d <= self.radius if self.closed else d < self.radius


@dataclass
class BallUnionComplement(Region):
    """``X`` minus the union of the closed balls ``B(x_i, r_i)``."""

    centers: np.ndarray
    radii: np.ndarray
    kind = "complement-of-ball-union"

    def contains(self, points):
        return dist_to_ball_union(np.asarray(points, dtype=float), self.centers, self.radii) > 0


@dataclass
class RasterMask(Region):
    occupancy: np.ndarray
    kind = "raster-mask"

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)

    @property
    def G(self) -> int:
        return self.occupancy.shape[0]

    def contains(self, points):
        pts = np.asarray(points, dtype=float)
        G = self.G
        i = np.floor(pts[..., 0] * G).astype(int) % G
        j = np.floor(pts[..., 1] * G).astype(int) % G
        return self.occupancy[i, j]

    def mask(self, G: int) -> np.ndarray:
        if G != self.G:
            raise ValueError(f"raster region has resolution {self.G}, requested {G}")
        return self.occupancy


def translates(points: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    """The nine integer translates of each point, shape (n, 9, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    shifts = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)], dtype=float)
    return pts[:, None, :] + shifts[None, :, :]


def iter_points(points: Iterable) -> list[TorusPoint]:
    return [as_point(p) for p in points]
