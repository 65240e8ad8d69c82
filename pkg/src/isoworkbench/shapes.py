"""Analytic planar shapes on the torus and their rasterization.

A shape description is a sequence of signed primitives applied in order:
``+`` adds the primitive to the set, ``-`` removes it.  The text form has one
primitive per line::

    + disk  u v r
    - rect  u v width height
    + rect  u v width height angle

Rectangles are given by their center, side lengths and an optional rotation
angle in radians.  Blank lines and ``#`` comments are ignored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .torus import cell_centers, wrap_delta


@dataclass(frozen=True)
class Disk:
    u: float
    v: float
    r: float

    def contains(self, U, V):
        du, dv = wrap_delta(U - self.u), wrap_delta(V - self.v)
        return du * du + dv * dv < self.r * self.r

    @property
    def area(self) -> float:
        return math.pi * self.r ** 2

    @property
    def perimeter(self) -> float:
        return 2 * math.pi * self.r

    def to_line(self) -> str:
        return f"disk {self.u!r} {self.v!r} {self.r!r}"


@dataclass(frozen=True)
class Rect:
    u: float
    v: float
    width: float
    height: float
    angle: float = 0.0

    def contains(self, U, V):
        du, dv = wrap_delta(U - self.u), wrap_delta(V - self.v)
        c, s = math.cos(self.angle), math.sin(self.angle)
        a = c * du + s * dv
        b = -s * du + c * dv
        return (np.abs(a) < 0.5 * self.width) & (np.abs(b) < 0.5 * self.height)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def perimeter(self) -> float:
        return 2 * (self.width + self.height)

    def to_line(self) -> str:
        tail = f" {self.angle!r}" if self.angle else ""
        return f"rect {self.u!r} {self.v!r} {self.width!r} {self.height!r}{tail}"


@dataclass(frozen=True)
class ShapeSet:
    """Ordered signed union of disks and rectangles."""

    items: tuple = ()

    def add(self, shape) -> "ShapeSet":
        return ShapeSet(self.items + ((1, shape),))

    def remove(self, shape) -> "ShapeSet":
        return ShapeSet(self.items + ((-1, shape),))

    def mask(self, G: int) -> np.ndarray:
        U, V = cell_centers(G)
        out = np.zeros((G, G), dtype=bool)
        for sign, shape in self.items:
            m = shape.contains(U, V)
            out = (out | m) if sign > 0 else (out & ~m)
        return out

    def rasterize(self, G: int):
        from .perimeter import RasterSet
        return RasterSet(self.mask(G), provenance=f"shapes {len(self.items)} primitives")

    def to_text(self) -> str:
        return "".join(f"{'+' if s > 0 else '-'} {shape.to_line()}\n" for s, shape in self.items)

    @classmethod
    def from_text(cls, text: str) -> "ShapeSet":
        items = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] not in "+-" or len(parts) < 2:
                raise ValueError(f"line {lineno}: expected '+' or '-' then a primitive")
            sign = 1 if parts[0] == "+" else -1
            kind, nums = parts[1], [float(x) for x in parts[2:]]
            if kind == "disk" and len(nums) == 3:
                if nums[2] <= 0:
                    raise ValueError(f"line {lineno}: disk radius must be positive")
                shape = Disk(*nums)
            elif kind == "rect" and len(nums) in (4, 5):
                if nums[2] <= 0 or nums[3] <= 0:
                    raise ValueError(f"line {lineno}: rectangle sides must be positive")
                shape = Rect(*nums)
            else:
                raise ValueError(f"line {lineno}: cannot parse {kind!r} with {len(nums)} numbers")
            items.append((sign, shape))
        return cls(tuple(items))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ShapeSet":
        return cls.from_text(Path(path).read_text())


def disk_mask(G: int, center, r: float) -> np.ndarray:
    return Disk(float(center[0]), float(center[1]), r).contains(*cell_centers(G))


def rect_mask(G: int, center, width: float, height: float, angle: float = 0.0) -> np.ndarray:
    return Rect(float(center[0]), float(center[1]), width, height, angle).contains(*cell_centers(G))


def random_disk_union(rng, n_max: int = 5, r_range=(0.02, 0.12)) -> ShapeSet:
    """Union of 1..n_max disks with random centers and radii."""
    k = int(rng.integers(1, n_max + 1))
    items = []
    for _ in range(k):
        u, v = rng.uniform(0, 1, 2)
        items.append((1, Disk(float(u), float(v), float(rng.uniform(*r_range)))))
    return ShapeSet(tuple(items))
