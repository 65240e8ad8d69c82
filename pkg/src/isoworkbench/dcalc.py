"""One-sided pairings ``D+- f(grad g)`` of slopes, and the checks built on them.

The slope here is the ring slope: the ring of ``n`` difference quotients
``(g(x + s e_k) - g(x)) / s`` is extended to all directions by trigonometric
interpolation and its largest absolute value is located by Newton steps from
the best samples.  For this slope the map ``eps -> lip(g + eps f)`` is a
maximum of affine functions of ``eps``, so the limit defining ``D+`` is the
one-sided derivative at the maximizing directions (Danskin):

    D+ f(grad g) = max over maximizers theta of T_g(theta) T_f(theta)
    D- f(grad g) = min over the same set

where ``T`` denotes the interpolated quotient.  A continuum of directions
keeps the maximizer continuous in the data; with finitely many directions
the active direction jumps across ties and the pairing with it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .construction import WeightedTorus, lens_area, uniform_torus
from .perimeter import RasterSet, as_raster, perimeter_raster
from .shapes import Disk, Rect, ShapeSet, disk_mask
from .torus import (TORUS_DIAMETER, RingStencil, ScalarField, as_point, cell_centers, det_sum,
                    distance_field, RasterMask, second_difference_bound, TorusPoint,
                    wrap_delta)

DEFAULT_EPS = (0.1, 0.05, 0.025, 0.0125)
N_CANDIDATES = 2
NEWTON_ITERS = 12


def _vals(f):
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def ring_samples(values: np.ndarray, stencil: RingStencil) -> np.ndarray:
    """All ring quotients, shape ``(n_dirs, G, G)``."""
    return np.stack(list(stencil.quotients(values)))


class _Trig:
    """Trigonometric interpolant of ring samples, evaluated per cell at given angles."""

    def __init__(self, samples: np.ndarray | None = None, coeffs=None):
        if coeffs is not None:
            self.a, self.b = coeffs
            return
        n = samples.shape[0]
        if n % 2:
            raise ValueError("ring interpolation needs an even number of directions")
        c = np.fft.rfft(samples, axis=0) / n
        c[1:n // 2] *= 2.0
        self.a = np.ascontiguousarray(c.real)
        self.b = np.ascontiguousarray(-c.imag)
        self.b[n // 2] = 0.0

    @property
    def n(self) -> int:
        return 2 * (self.a.shape[0] - 1)

    def combine(self, other: "_Trig", e: float) -> "_Trig":
        return _Trig(coeffs=(self.a + e * other.a, self.b + e * other.b))

    def eval(self, theta: np.ndarray, derivs: bool = True):
        c1, s1 = np.cos(theta), np.sin(theta)
        cm, sm = np.ones_like(theta), np.zeros_like(theta)
        t = np.zeros(theta.shape)
        d1 = np.zeros(theta.shape) if derivs else None
        d2 = np.zeros(theta.shape) if derivs else None
        for m in range(self.a.shape[0]):
            am, bm = self.a[m], self.b[m]
            t += am * cm + bm * sm
            if derivs and m:
                d1 += m * (bm * cm - am * sm)
                d2 -= m * m * (am * cm + bm * sm)
            cm, sm = cm * c1 - sm * s1, sm * c1 + cm * s1
        return t, d1, d2


def _refine(trig: _Trig, theta: np.ndarray, iters: int = NEWTON_ITERS) -> np.ndarray:
    """Newton steps toward a local maximum of ``|T|``, each step capped at half a sample gap.

    Cells drop out once their step is at rounding level, so late iterations are cheap.
    """
    cap = math.pi / trig.n
    shape = theta.shape
    th = theta.reshape(shape[0], -1).copy()
    a = trig.a.reshape(trig.a.shape[0], -1)
    b = trig.b.reshape(trig.b.shape[0], -1)
    idx = np.arange(th.shape[1])
    for _ in range(iters):
        if idx.size == th.shape[1]:
            t, d1, d2 = _Trig(coeffs=(a[:, None], b[:, None])).eval(th)
        else:
            t, d1, d2 = _Trig(coeffs=(a[:, None, idx], b[:, None, idx])).eval(th[:, idx])
        sg = np.where(t >= 0, 1.0, -1.0)
        d1s, d2s = sg * d1, sg * d2
        step = np.where(d2s < 0, -d1s / np.where(d2s < 0, d2s, -1.0), np.sign(d1s) * cap)
        step = np.clip(step, -cap, cap)
        th[:, idx] += step
        keep = np.max(np.abs(step), axis=0) > 1e-14
        # drop converged cells only once enough of them are done to pay for the gather
        if keep.mean() < 0.5:
            idx = idx[keep]
        if idx.size == 0:
            break
    return th.reshape(shape)


@dataclass
class RingAnalysis:
    """Maximizing directions of the ring slope of ``g``, ready to pair other fields with."""

    stencil: RingStencil
    trig: _Trig
    theta: np.ndarray        # (n_cand, G, G)
    active: np.ndarray       # (n_cand, G, G)
    tg: np.ndarray           # interpolated quotient of g at each candidate
    slope: np.ndarray        # ring slope of g

    def at(self, f) -> np.ndarray:
        """Interpolated quotients of ``f`` at the candidate directions, ``(n_cand, G, G)``."""
        return _Trig(ring_samples(_vals(f), self.stencil)).eval(self.theta, derivs=False)[0]

    def pair(self, f):
        """``(D+, D-)`` of ``f`` against ``g``."""
        prod = self.tg * self.at(f)
        plus = np.where(self.active, prod, -np.inf).max(axis=0)
        minus = np.where(self.active, prod, np.inf).min(axis=0)
        zero = self.slope == 0
        return np.where(zero, 0.0, plus), np.where(zero, 0.0, minus)


def _candidates(S: np.ndarray, n_cand: int):
    A = np.abs(S)
    # discrete local maxima of |quotient| around the ring, best first
    locmax = (A >= np.roll(A, 1, axis=0)) & (A >= np.roll(A, -1, axis=0))
    score = np.where(locmax, A, -1.0)
    order = np.argsort(-score, axis=0, kind="stable")[:n_cand]
    valid = np.take_along_axis(score, order, axis=0) >= 0
    valid[0] = True
    n = S.shape[0]
    # vertex of the parabola through the three samples around each maximum
    am = np.take_along_axis(A, (order - 1) % n, axis=0)
    a0 = np.take_along_axis(A, order, axis=0)
    ap = np.take_along_axis(A, (order + 1) % n, axis=0)
    den = am - 2 * a0 + ap
    off = np.where(den < 0, 0.5 * (am - ap) / np.where(den < 0, den, -1.0), 0.0)
    theta0 = 2 * math.pi * (order + np.clip(off, -0.5, 0.5)) / n
    return theta0, valid


def _maximize(trig: _Trig, theta0: np.ndarray, valid: np.ndarray, iters: int):
    theta = _refine(trig, theta0, iters)
    tg = trig.eval(theta, derivs=False)[0]
    # fall back to the nearest sample direction where refinement lost ground
    ts = (2 * math.pi / trig.n) * np.round(theta0 * trig.n / (2 * math.pi))
    k = np.round(ts * trig.n / (2 * math.pi)).astype(int) % trig.n
    samp = _sample_values(trig, k)
    worse = np.abs(tg) < np.abs(samp) * (1 - 1e-13)
    if np.any(worse):
        sub = _Trig(coeffs=(trig.a[:, worse.any(axis=0)], trig.b[:, worse.any(axis=0)]))
        cols = worse.any(axis=0)
        t_sub = sub.eval(ts[:, cols], derivs=False)[0]
        w = worse[:, cols]
        theta[:, cols] = np.where(w, ts[:, cols], theta[:, cols])
        tg[:, cols] = np.where(w, t_sub, tg[:, cols])
    mag = np.where(valid, np.abs(tg), -1.0)
    return theta, tg, mag


def _sample_values(trig: _Trig, k: np.ndarray) -> np.ndarray:
    # the interpolant reproduces the samples; recover them by inverse transform
    n = trig.n
    c = trig.a - 1j * trig.b
    c[1:n // 2] *= 0.5
    S = np.fft.irfft(c * n, n=n, axis=0)
    return np.take_along_axis(S, k, axis=0)


def ring_analysis(g, stencil: RingStencil, n_cand: int = N_CANDIDATES) -> RingAnalysis:
    S = ring_samples(_vals(g), stencil)
    theta0, valid = _candidates(S, n_cand)
    trig = _Trig(S)
    theta, tg, mag = _maximize(trig, theta0, valid, NEWTON_ITERS)
    L = mag.max(axis=0)
    active = valid & (mag >= L * (1.0 - 1e-12))
    return RingAnalysis(stencil, trig, theta, active, tg, L)


def ring_slope(f, stencil: RingStencil) -> np.ndarray:
    return ring_analysis(f, stencil).slope


def field_scale(f) -> float:
    v = _vals(f)
    return float(np.max(np.abs(v))) or 1.0


@dataclass
class DField:
    """``D+ f(grad g)`` and ``D- f(grad g)`` on the grid, with the eps-quotient diagnostic."""

    plus_values: np.ndarray
    minus_values: np.ndarray
    eps_schedule: tuple
    quotients: list = field(default_factory=list)
    monotone_violation: float = 0.0
    upper_bound_gap: float = 0.0
    tolerance: float = 0.0

    @property
    def monotone(self) -> bool:
        return self.monotone_violation <= self.tolerance


def _eps_quotients(an: RingAnalysis, f, eps_abs, sign: float):
    """``(lip(g + e f)^2 - lip(g)^2) / (2 e)`` for each ``e``, maximizing from the candidates of ``g``."""
    F = _Trig(ring_samples(_vals(f), an.stencil))
    valid = an.tg == an.tg
    L2 = an.slope ** 2
    out = []
    for e in eps_abs:
        trig = an.trig.combine(F, sign * e)
        _, _, mag = _maximize(trig, an.theta, valid, 3)
        out.append((mag.max(axis=0) ** 2 - L2) / (2 * sign * e))
    return out


def d_fields(f, g, stencil: RingStencil, eps_schedule=DEFAULT_EPS, diagnostics: bool = True,
             tolerance: float | None = None) -> DField:
    """Evaluate ``D+- f(grad g)``.

    ``eps_schedule`` is relative to ``max|g| / max|f|``.  The eps-quotients are
    nonincreasing as eps decreases (convexity); a violation beyond
    ``tolerance`` means the fields are under-resolved and raises.
    """
    eps = tuple(float(e) for e in eps_schedule)
    if len(eps) < 4 or any(b >= a for a, b in zip(eps, eps[1:])) or eps[-1] <= 0:
        raise ValueError("eps schedule must be strictly decreasing, positive, with >= 4 entries")
    an = ring_analysis(g, stencil)
    plus, minus = an.pair(f)
    out = DField(plus, minus, eps)
    if not diagnostics:
        return out
    scale = field_scale(g) / field_scale(f)
    eps_abs = [e * scale for e in eps]
    qp = _eps_quotients(an, f, eps_abs, 1.0)
    qm = _eps_quotients(an, f, eps_abs, -1.0)
    lf = float(ring_slope(f, stencil).max())
    tol = tolerance if tolerance is not None else 1e-9 * (float(an.slope.max()) * lf + lf ** 2 * eps_abs[0])
    viol = 0.0
    for a, b in zip(qp, qp[1:]):
        viol = max(viol, float(np.max(b - a)))
    for a, b in zip(qm, qm[1:]):
        viol = max(viol, float(np.max(a - b)))
    gap = float(np.max(plus - qp[-1]))
    out.quotients = [("plus", e, float(np.mean(q))) for e, q in zip(eps_abs, qp)]
    out.quotients += [("minus", e, float(np.mean(q))) for e, q in zip(eps_abs, qm)]
    out.monotone_violation = viol
    out.upper_bound_gap = gap
    out.tolerance = tol
    if viol > tol:
        raise ValueError(f"eps-quotients not monotone (violation {viol:.3g} > {tol:.3g}); "
                         "fields look under-resolved")
    return out


def d_plus(f, g, stencil: RingStencil, eps_schedule=DEFAULT_EPS) -> DField:
    return d_fields(f, g, stencil, eps_schedule)


def d_minus(f, g, stencil: RingStencil, eps_schedule=DEFAULT_EPS) -> DField:
    return d_fields(f, g, stencil, eps_schedule)


# ---------------------------------------------------------------------------
# calculus rules

@dataclass
class RuleRow:
    name: str
    worst: float          # largest violation (positive means the rule is off by that much)
    tolerance: float
    cells: int            # cells where the rule was asserted

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def to_dict(self) -> dict:
        return {"name": self.name, "worst": self.worst, "tolerance": self.tolerance,
                "cells": self.cells, "passed": self.passed}


@dataclass
class RulesReport:
    rows: list
    tolerances: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, name: str) -> RuleRow:
        return next(r for r in self.rows if r.name == name)


@dataclass
class GridTolerance:
    """Pointwise tolerances for the rules, from the stencil step and field bounds.

    ``s`` is the stencil radius, ``L`` the largest slope and ``H`` the largest
    second difference of a field.  Forward quotients carry an ``s H / 2``
    defect, and opposite directions differ by ``s H``; these give

    * chain rule: ``2 s (2|g| (L_g H_f + H_g L_f) + L_g^2 L_f)``
    * Leibniz: ``2 s L_g L_f L_h``

    Rules that hold exactly for the discrete pairing get ``rounding`` only.
    """

    s: float
    rounding: float
    Lf: float
    Lg: float
    Lh: float
    Hf: float
    Hg: float

    def chain(self, g: np.ndarray) -> np.ndarray:
        return 2 * self.s * (2 * np.abs(g) * (self.Lg * self.Hf + self.Hg * self.Lf)
                             + self.Lg ** 2 * self.Lf) + self.rounding

    def leibniz(self) -> float:
        return 2 * self.s * self.Lg * self.Lf * self.Lh + self.rounding

    def to_dict(self) -> dict:
        return {"s": self.s, "rounding": self.rounding, "leibniz": self.leibniz(),
                "chain_max": float(np.max(self.chain(np.array([0.0])))), "Lf": self.Lf,
                "Lg": self.Lg, "Lh": self.Lh, "Hf": self.Hf, "Hg": self.Hg}


def _rounding_tol(stencil: RingStencil, *fields) -> float:
    # quotients lose about |f| eps / s; allow a wide multiple
    scale = max(field_scale(f) for f in fields)
    return 1e4 * np.finfo(float).eps * scale * scale / stencil.radius ** 2


def _erode(mask: np.ndarray, cells: int) -> np.ndarray:
    out = mask.copy()
    for _ in range(cells):
        out &= np.roll(out, 1, 0) & np.roll(out, -1, 0) & np.roll(out, 1, 1) & np.roll(out, -1, 1)
    return out


def check_dcalc_rules(f, g, h, stencil: RingStencil | None = None, lam: float = 0.7,
                      f_tilde=None) -> RulesReport:
    """Check the pointwise rules of the one-sided pairings on the grid.

    Rows: ordering, sandwich, homogeneity (both signs), constant shift, the
    slope bound, locality, chain rule (where ``g >= 0``) and Leibniz (where
    ``f, h >= 0``).  ``f_tilde`` defaults to ``f`` altered on one quadrant;
    locality is asserted on the interior of ``{f = f_tilde}`` eroded by the
    stencil reach.
    """
    fv, gv, hv = _vals(f), _vals(g), _vals(h)
    G = fv.shape[0]
    st = stencil or RingStencil(G, 1.0 / G, 32)
    an_g = ring_analysis(gv, st)
    an_f = ring_analysis(fv, st)
    an_h = ring_analysis(hv, st)
    Lg, Lf, Lh = an_g.slope, an_f.slope, an_h.slope
    tol = GridTolerance(st.radius, _rounding_tol(st, fv, gv, hv), float(Lf.max()), float(Lg.max()),
                        float(Lh.max()), second_difference_bound(ScalarField(fv)), second_difference_bound(ScalarField(gv)))
    r0 = tol.rounding
    rows = []
    n_all = fv.size

    plus, minus = an_g.pair(fv)
    rows.append(RuleRow("ordering", float(np.max(minus - plus)), 0.0, n_all))
    up = ring_analysis(gv + fv, st).slope
    lo = ring_analysis(gv - fv, st).slope
    rows.append(RuleRow("sandwich", float(max(np.max(plus - up ** 2 / 2), np.max(-lo ** 2 / 2 - minus))),
                        r0, n_all))
    pl, _ = an_g.pair(lam * fv)
    rows.append(RuleRow("homogeneity", float(np.max(np.abs(pl - lam * plus))), r0, n_all))
    pn, _ = an_g.pair(-lam * fv)
    rows.append(RuleRow("homogeneity-negative", float(np.max(np.abs(pn + lam * minus))), r0, n_all))
    p1, _ = an_g.pair(fv + 1.0)
    rows.append(RuleRow("constant-shift", float(np.max(np.abs(p1 - plus))), r0, n_all))
    bound = Lf * Lg
    rows.append(RuleRow("slope-bound", float(max(np.max(np.abs(plus) - bound), np.max(np.abs(minus) - bound))),
                        r0, n_all))

    if f_tilde is None:
        ft = fv.copy()
        ft[: G // 2, : G // 2] += 0.5 * np.sin(np.pi * np.arange(G // 2) / (G // 2))[None, :] ** 2
    else:
        ft = _vals(f_tilde)
    reach = int(math.ceil(st.radius * G)) + 1
    inside = _erode(fv == ft, reach)
    pt, mt = an_g.pair(ft)
    loc = float(max(np.max(np.abs(pt - plus)[inside], initial=0.0), np.max(np.abs(mt - minus)[inside], initial=0.0)))
    rows.append(RuleRow("locality", loc, 0.0, int(inside.sum())))

    sel = gv >= 0
    p2, _ = ring_analysis(gv * gv, st).pair(fv)
    excess = np.abs(p2 - 2 * gv * plus) - tol.chain(gv)
    rows.append(RuleRow("chain", float(np.max(excess[sel], initial=-np.inf)) + 0.0, 0.0, int(sel.sum())))

    sel = (fv >= 0) & (hv >= 0)
    ph, _ = an_g.pair(hv)
    pfh, _ = an_g.pair(fv * hv)
    lhs = pfh - fv * ph - hv * plus
    rows.append(RuleRow("leibniz", float(np.max(lhs[sel], initial=-np.inf)), tol.leibniz(), int(sel.sum())))
    return RulesReport(rows, tol.to_dict())


# ---------------------------------------------------------------------------
# test functions and the upper Laplacian bound

def mollifier_family(x, r: float, k: float, G: int) -> ScalarField:
    """``1 - k (d_x - r)`` clipped to ``[0, 1]``: 1 on ``B(x, r)``, 0 beyond ``r + 1/k``."""
    if r < 0 or k <= 0:
        raise ValueError("need r >= 0 and k > 0")
    if r + 1.0 / k >= TORUS_DIAMETER:
        raise ValueError("r + 1/k must stay below the torus diameter")
    d = distance_field(x, G).values
    return ScalarField(np.clip(1.0 - k * (d - r), 0.0, 1.0))


def _bump1(t, a):
    return np.maximum(0.0, 1.0 - (t / a) ** 2) ** 2


@dataclass(frozen=True)
class TestFunction:
    """Recipe for a nonnegative Lipschitz test function; ``field(G)`` samples it."""

    kind: str
    center: tuple
    params: tuple

    def field(self, G: int) -> ScalarField:
        U, V = cell_centers(G)
        y = self.center
        if self.kind == "radial-hat":
            (rho,) = self.params
            return ScalarField(np.maximum(0.0, 1.0 - distance_field(y, G).values / rho))
        if self.kind == "ring-hat":
            r0, w = self.params
            return ScalarField(np.maximum(0.0, 1.0 - np.abs(distance_field(y, G).values - r0) / w))
        if self.kind == "tensor-bump":
            a, b = self.params
            return ScalarField(_bump1(wrap_delta(U - y[0]), a) * _bump1(wrap_delta(V - y[1]), b))
        if self.kind == "mollifier-product":
            r, k, a = self.params
            m = mollifier_family(y, r, k, G).values
            return ScalarField(m * _bump1(wrap_delta(U - y[0]), a) * _bump1(wrap_delta(V - y[1]), a))
        if self.kind == "zero":
            return ScalarField(np.zeros((G, G)))
        raise ValueError(f"unknown test function kind {self.kind!r}")

    def support_radius(self) -> float:
        """Radius of a ball around ``center`` containing the support."""
        if self.kind == "radial-hat":
            return self.params[0]
        if self.kind == "ring-hat":
            return self.params[0] + self.params[1]
        if self.kind == "tensor-bump":
            return math.hypot(*self.params)
        if self.kind == "mollifier-product":
            r, k, a = self.params
            return min(r + 1.0 / k, math.sqrt(2) * a)
        return 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "params": list(self.params)}


def test_family(x, R: float, n_tests: int, seed: int = 0) -> list:
    """Random radial hats, ring hats, tensor bumps and mollifier products supported in ``B(x, R)``.

    Every fourth function is a radial hat centered at ``x``; the others rotate
    through the remaining kinds with random centers and sizes.
    """
    rng = np.random.default_rng(seed)
    x = as_point(x)
    out = []
    for i in range(n_tests):
        kind = ("radial-hat", "ring-hat", "tensor-bump", "mollifier-product")[i % 4]
        if kind == "radial-hat":
            tf = TestFunction(kind, (x.u, x.v), (float(rng.uniform(0.3, 0.95) * R),))
        elif kind == "ring-hat":
            w = float(rng.uniform(0.05, 0.2) * R)
            r0 = float(rng.uniform(w, 0.95 * R - w))
            tf = TestFunction(kind, (x.u, x.v), (r0, w))
        else:
            size = float(rng.uniform(0.1, 0.35) * R)
            off = float(rng.uniform(0.0, 0.9 * R - math.sqrt(2) * size))
            ang = float(rng.uniform(0, 2 * math.pi))
            y = (x.u + off * math.cos(ang), x.v + off * math.sin(ang))
            if kind == "tensor-bump":
                tf = TestFunction(kind, y, (size, float(size * rng.uniform(0.6, 1.0))))
            else:
                k = float(rng.uniform(2.0, 6.0) / size)
                tf = TestFunction(kind, y, (0.4 * size, k, size))
        out.append(tf)
    return out


@dataclass
class LaplacianCheck:
    """Outcome of testing ``-int D+f(grad d_x^2) dm <= C int f dm`` on a test family.

    A pass means no violation was found among the tests, not that the bound holds.
    """

    center: tuple
    radius: float
    C: float
    test_functions: list
    lhs: list
    rhs: list
    eps_quad: list
    verdict: str = ""

    def __post_init__(self):
        if not self.verdict:
            self.verdict = "pass" if self.passed else "fail"

    @property
    def margins(self) -> list:
        return [r + e * abs(l) - l for l, r, e in zip(self.lhs, self.rhs, self.eps_quad)]

    @property
    def passed(self) -> bool:
        return all(m >= 0 for m in self.margins)

    def failures(self) -> list:
        return [i for i, m in enumerate(self.margins) if m < 0]

    def summary(self) -> str:
        n = len(self.lhs)
        if self.passed:
            return f"no violation found among {n} tests"
        return f"{len(self.failures())} of {n} tests violate the bound"

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius, "C": self.C,
                "verdict": self.verdict, "summary": self.summary(),
                "tests": [{**tf.to_dict(), "lhs": l, "rhs": r, "eps_quad": e, "margin": m}
                          for tf, l, r, e, m in zip(self.test_functions, self.lhs, self.rhs,
                                                     self.eps_quad, self.margins)]}


def quadrature_tolerance(f: np.ndarray, d: np.ndarray, s: float, h: float) -> float:
    """Relative error of the discrete pairing against ``d_x^2``.

    Forward quotients shift the radial pairing by ``(s + h) / (4 rbar)`` where
    ``rbar = int f / int (f / d)``; the sum is exact for radial functions.
    """
    total = det_sum(f)
    if total == 0:
        return 0.0
    pos = d > 0
    inv = det_sum(f[pos] / d[pos]) + (det_sum(f[~pos]) / (0.5 * h) if np.any(~pos) else 0.0)
    return (s + h) * inv / (4.0 * total)


def check_laplacian_bound(x, R: float, C: float, W: WeightedTorus | None = None, n_tests: int = 50,
                          seed: int = 0, G: int = 512, tests=None,
                          stencil: RingStencil | None = None) -> LaplacianCheck:
    """Test ``Delta d_x^2 <= C m`` on ``B(x, R)`` against a random test family."""
    if not 0 < R <= 0.45:
        raise ValueError("R must lie in (0, 0.45]")
    if C <= 0:
        raise ValueError("C must be positive")
    x = as_point(x)
    st = stencil or RingStencil(G, 1.0 / G, 32)
    rho = (W or uniform_torus()).density_grid(G)
    d = distance_field(x, G).values
    an = ring_analysis(d * d, st)
    tests = list(tests) if tests is not None else test_family(x, R, n_tests, seed)
    h2 = 1.0 / G ** 2
    lhs, rhs, eps = [], [], []
    for tf in tests:
        f = tf.field(G).values
        if np.any(f < 0):
            raise ValueError("test functions must be nonnegative")
        if np.any((f > 0) & (d >= R)):
            raise ValueError(f"{tf.kind} test function leaves B(x, R)")
        plus, _ = an.pair(f)
        lhs.append(-det_sum(plus * rho) * h2)
        rhs.append(C * det_sum(f * rho) * h2)
        eps.append(quadrature_tolerance(f * rho, d, st.radius, 1.0 / G))
    return LaplacianCheck((x.u, x.v), R, C, tests, lhs, rhs, eps)


# ---------------------------------------------------------------------------
# deformation inequalities

def _circle_in_rect_length(cx: float, cy: float, r: float, hw: float, hh: float) -> float:
    """Length of the circle ``|p - (cx, cy)| = r`` inside ``[-hw, hw] x [-hh, hh]``."""
    cuts = [0.0, 2 * math.pi]
    for off, lim, axis in ((cx, hw, 0), (cx, -hw, 0), (cy, hh, 1), (cy, -hh, 1)):
        t = (lim - off) / r
        if abs(t) < 1:
            a = math.acos(t) if axis == 0 else math.asin(t)
            b = -a if axis == 0 else math.pi - a
            cuts += [a % (2 * math.pi), b % (2 * math.pi)]
    cuts.sort()
    total = 0.0
    for a, b in zip(cuts, cuts[1:]):
        m = 0.5 * (a + b)
        if abs(cx + r * math.cos(m)) < hw and abs(cy + r * math.sin(m)) < hh:
            total += r * (b - a)
    return total


def _rect_in_disk_length(cx: float, cy: float, r: float, hw: float, hh: float) -> float:
    """Length of the rectangle boundary inside the disk ``B((cx, cy), r)``."""
    total = 0.0
    for fixed, c_fixed, c_free, half in ((hh, cy, cx, hw), (-hh, cy, cx, hw),
                                         (hw, cx, cy, hh), (-hw, cx, cy, hh)):
        dd = r * r - (fixed - c_fixed) ** 2
        if dd <= 0:
            continue
        s = math.sqrt(dd)
        total += max(0.0, min(half, c_free + s) - max(-half, c_free - s))
    return total


def _disk_rect_area(cx: float, cy: float, r: float, hw: float, hh: float) -> float:
    """Area of ``B((cx, cy), r)`` inside ``[-hw, hw] x [-hh, hh]``, in closed form."""

    def F(t):
        # antiderivative of sqrt(r^2 - t^2)
        t = min(max(t, -r), r)
        return 0.5 * (t * math.sqrt(max(r * r - t * t, 0.0)) + r * r * math.asin(t / r))

    lo, hi = max(-hw, cx - r), min(hw, cx + r)
    if lo >= hi:
        return 0.0
    pts = {lo, hi}
    for lvl in (hh - cy, -hh - cy, hh + cy, -hh + cy):
        if 0 <= abs(lvl) < r:
            for sgn in (-1, 1):
                t = cx + sgn * math.sqrt(r * r - lvl * lvl)
                if lo < t < hi:
                    pts.add(t)
    pts = sorted(pts)
    area = 0.0
    for a, b in zip(pts, pts[1:]):
        m = 0.5 * (a + b)
        s = math.sqrt(max(r * r - (m - cx) ** 2, 0.0))
        top_clip, bot_clip = cy + s >= hh, cy - s <= -hh
        top = hh if top_clip else cy + s
        bot = -hh if bot_clip else cy - s
        if top <= bot:
            continue
        # integral of the top curve minus the bottom curve over [a, b]
        it = hh * (b - a) if top_clip else cy * (b - a) + F(b - cx) - F(a - cx)
        ib = -hh * (b - a) if bot_clip else cy * (b - a) - (F(b - cx) - F(a - cx))
        area += it - ib
    return area


def _ball_terms_disk(E: Disk, x: TorusPoint, r: float):
    dd = math.hypot(wrap_delta(x.u - E.u), wrap_delta(x.v - E.v))
    R = E.r
    if dd >= R + r:
        pbe, peb = 0.0, 0.0
    elif dd + r <= R:
        pbe, peb = 2 * math.pi * r, 0.0
    elif dd + R <= r:
        pbe, peb = 0.0, 2 * math.pi * R
    else:
        pbe = 2 * r * math.acos((r * r + dd * dd - R * R) / (2 * r * dd))
        peb = 2 * R * math.acos((R * R + dd * dd - r * r) / (2 * R * dd))
    return lens_area(R, r, dd), pbe, peb, E.perimeter


def _ball_terms_rect(E: Rect, x: TorusPoint, r: float):
    du, dv = wrap_delta(x.u - E.u), wrap_delta(x.v - E.v)
    c, s = math.cos(E.angle), math.sin(E.angle)
    cx, cy = c * du + s * dv, -s * du + c * dv
    hw, hh = 0.5 * E.width, 0.5 * E.height
    return (_disk_rect_area(cx, cy, r, hw, hh), _circle_in_rect_length(cx, cy, r, hw, hh),
            _rect_in_disk_length(cx, cy, r, hw, hh), E.perimeter)


@dataclass
class DeformationReport:
    """Both deformation inequalities at one ``(E, x, r)``; margins are ``rhs - lhs``."""

    x: tuple
    r: float
    C: float
    mass_in_ball: float
    per_ball_in_E: float
    per_E_in_ball: float
    per_E: float
    per_E_minus_ball: float
    error_bound: float
    path: str

    @property
    def lhs_11(self) -> float:
        return self.per_ball_in_E

    @property
    def rhs_11(self) -> float:
        return self.C * self.mass_in_ball / (2 * self.r) + self.per_E_in_ball

    @property
    def lhs_12(self) -> float:
        return self.per_E_minus_ball

    @property
    def rhs_12(self) -> float:
        return self.C * self.mass_in_ball / (2 * self.r) + self.per_E

    @property
    def margin_11(self) -> float:
        return self.rhs_11 - self.lhs_11

    @property
    def margin_12(self) -> float:
        return self.rhs_12 - self.lhs_12

    @property
    def passed(self) -> bool:
        return self.margin_11 >= -self.error_bound and self.margin_12 >= -self.error_bound

    def to_dict(self) -> dict:
        return {"x": list(self.x), "r": self.r, "C": self.C, "path": self.path,
                "lhs_11": self.lhs_11, "rhs_11": self.rhs_11, "margin_11": self.margin_11,
                "lhs_12": self.lhs_12, "rhs_12": self.rhs_12, "margin_12": self.margin_12,
                "error_bound": self.error_bound, "passed": self.passed}


def perturb_radius(r: float, h: float) -> float:
    """Nudge ``r`` off the cell-center distances so the sphere carries no grid mass."""
    return r + 0.381966 * 1e-3 * h


def check_deformation(E, x, r: float, C: float, W: WeightedTorus | None = None, G: int = 1024,
                      perturb: bool = True) -> DeformationReport:
    """Evaluate both deformation inequalities.

    ``E`` is a ``Disk`` or ``Rect`` (closed-form path, flat density) or
    anything rasterizable (Crofton path at resolution ``G``).
    """
    x = as_point(x)
    if r <= 0:
        raise ValueError("radius must be positive")
    analytic = isinstance(E, (Disk, Rect)) and (W is None or W.n == 0)
    if analytic:
        if r >= 0.25 or max(getattr(E, "r", 0.0), 0.5 * math.hypot(getattr(E, "width", 0.0),
                                                                      getattr(E, "height", 0.0))) >= 0.25:
            raise ValueError("closed-form path needs shapes that do not wrap around the torus")
        terms = _ball_terms_disk(E, x, r) if isinstance(E, Disk) else _ball_terms_rect(E, x, r)
        A, pbe, peb, pe = terms
        pem = pe - peb + pbe
        err = 64 * np.finfo(float).eps * (pe + pbe + C * A / r + 1.0)
        return DeformationReport((x.u, x.v), r, C, A, pbe, peb, pe, pem, err, "closed-form")
    if isinstance(E, ShapeSet):
        E = E.rasterize(G)
    elif isinstance(E, (Disk, Rect)):
        E = ShapeSet(((1, E),)).rasterize(G)
    E = as_raster(E)
    G = E.G
    h = 1.0 / G
    rp = perturb_radius(r, h) if perturb else r
    Wt = W or uniform_torus()
    rho = Wt.density_grid(G)
    B = RasterSet(disk_mask(G, (x.u, x.v), rp))
    A = det_sum(rho[E.occupancy & B.occupancy]) * h * h
    est_bE = perimeter_raster(B, omega=RasterMask(E.occupancy), W=Wt)
    est_Eb = perimeter_raster(E, omega=RasterMask(B.occupancy), W=Wt)
    est_E = perimeter_raster(E, W=Wt)
    est_Em = perimeter_raster(E - B, W=Wt)
    # the localized pieces share the boundary band; count each estimate's bound once
    err = est_bE.error_bound + est_Eb.error_bound + est_E.error_bound + est_Em.error_bound
    err += C * (2 * math.pi * rp * h) / (2 * rp)  # one shell of cells in m(E cap B)
    return DeformationReport((x.u, x.v), rp, C, A, est_bE.value, est_Eb.value, est_E.value,
                             est_Em.value, err, f"raster-{G}")


def random_deformation_cases(n: int, seed: int = 0) -> list:
    """Random disks and rotated squares with a ball center near the set."""
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n):
        u, v = rng.uniform(0, 1, 2)
        if i % 2 == 0:
            E = Disk(float(u), float(v), float(rng.uniform(0.05, 0.2)))
            size = E.r
        else:
            side = float(rng.uniform(0.1, 0.3))
            E = Rect(float(u), float(v), side, side, float(rng.uniform(0, math.pi / 2)))
            size = side / math.sqrt(2)
        ang = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(0, size + 0.05)
        x = (float(u + dist * math.cos(ang)), float(v + dist * math.sin(ang)))
        cases.append((E, x, float(rng.uniform(0.02, 0.15))))
    return cases


@dataclass
class ProbeRow:
    k: int
    r: float
    ratio: float          # (Per(E \ B) - Per(E)) / (m(E cap B) / (2r))


def deformation_probe(W: WeightedTorus, ks, delta: float = 1e-3) -> list:
    """Observed deformation ratios for ``E`` the complement of the ball union, ``B = B(x_k, (1 + delta) r_k)``.

    Closed form: removing the ball swaps the low-density arc of ``B_k`` for the
    unit-density sphere and removes a thin shell of mass.  Large ratios are
    observations, not a disproof.
    """
    rows = []
    for k in ks:
        rk = float(W.balls.radii[k - 1])
        r = (1 + delta) * rk
        gained = 2 * math.pi * r * W.exterior_density - 2 * math.pi * rk * W.c
        mass = W.exterior_density * math.pi * (r * r - rk * rk)
        rows.append(ProbeRow(k, r, gained / (mass / (2 * r))))
    return rows


# ---------------------------------------------------------------------------
# curvature constant and sphere masses

@dataclass(frozen=True)
class MCPParams:
    K: float
    N: float
    R: float

    def __post_init__(self):
        if not self.N > 1:
            raise ValueError("N must exceed 1")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if self.K > 0 and self.R >= math.pi * math.sqrt((self.N - 1) / self.K):
            raise ValueError(f"R = {self.R} reaches the conjugate radius "
                             f"{math.pi * math.sqrt((self.N - 1) / self.K):.6g}")


def comparison_log_derivative(kappa: float, r: float) -> float:
    """``r s_kappa'(r) / s_kappa(r)`` for the comparison function ``s_kappa``."""
    if kappa == 0:
        return 1.0
    q = math.sqrt(abs(kappa)) * r
    if kappa > 0:
        return q / math.tan(q)
    return q / math.tanh(q)


def mcp_constant(p: MCPParams) -> float:
    """``sup_{0 < r < R} 2 (1 + (N - 1) r s'(r) / s(r))`` with ``kappa = K / (N - 1)``.

    The bracket is monotone in ``r``: nondecreasing for ``K < 0`` (sup at ``R``),
    nonincreasing for ``K > 0`` (sup is the ``r -> 0`` limit ``2N``).
    """
    if p.K >= 0:
        return 2.0 * p.N
    return 2.0 * (1.0 + (p.N - 1) * comparison_log_derivative(p.K / (p.N - 1), p.R))


@dataclass
class SphereScan:
    radii: np.ndarray
    mass: np.ndarray          # mass of the one-cell shell at each radius
    normalized: np.ndarray    # mass / (2 pi r h)
    flagged: np.ndarray

    def to_rows(self) -> list:
        return [{"r": float(r), "shell_mass": float(m), "normalized": float(q), "flagged": bool(f)}
                for r, m, q, f in zip(self.radii, self.mass, self.normalized, self.flagged)]


def sphere_mass_scan(x, W: WeightedTorus | None, n_radii: int, G: int = 1024,
                     r_max: float = 0.45, factor: float = 3.0) -> SphereScan:
    """One-cell shell masses around ``x``.

    A radius is flagged when its density-normalized shell mass is more than
    ``factor`` times the median, or changes by more than ``factor`` against a
    neighbor (a shell straddling a density jump).
    """
    if n_radii <= 0:
        e = np.zeros(0)
        return SphereScan(e, e, e, np.zeros(0, dtype=bool))
    h = 1.0 / G
    radii = np.linspace(4 * h, r_max, n_radii)
    d = distance_field(x, G).values
    rho = (W or uniform_torus()).density_grid(G)
    # shell j collects cells with r_j <= d < r_j + h
    mass = np.zeros(n_radii)
    for j, r in enumerate(radii):
        sel = (d >= r) & (d < r + h)
        mass[j] = det_sum(rho[sel]) * h * h
    norm = mass / (2 * math.pi * radii * h)
    med = float(np.median(norm))
    flagged = norm > factor * med
    ratio = np.maximum(norm[1:], 1e-300) / np.maximum(norm[:-1], 1e-300)
    jump = (ratio > factor) | (ratio < 1 / factor)
    flagged[1:] |= jump
    flagged[:-1] |= jump
    return SphereScan(radii, mass, norm, flagged)
