"""Raster checks of the lower bounds behind the minimality of ``U`` and the competitor audit.

All raster terms live on an ``AuditGrid``: the explicit balls with radius at
least four cells are rasterized, the remaining balls (and the infinite tail)
are carried analytically.  A competitor is a raster set, a flag saying
whether the unrasterized balls belong to it, and optional analytic disks in
``V`` that stay clear of every explicit ball.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .construction import Profile, WeightedTorus, next_center, tail_area, tail_length
from .perimeter import (DEFAULT_DIRECTIONS, anisotropy_bound, connected_components,
                        component_diameter, crofton_pairs, crofton_weights, digitization_bound,
                        _occ)
from .rearrangement import BoundReport
from .shapes import Disk, disk_mask, rect_mask
from .torus import cell_centers, dist_to_ball_union, torus_distance, wrap_delta

LEMMA_SQRT_CONST = 2.0 * math.sqrt(math.pi) / (4.0 * math.pi + 1.0)
GAP_CONST = 1.0 / (4.0 * math.sqrt(math.pi))
VOLUME_TOL = 1e-3


@dataclass
class AuditGrid:
    W: WeightedTorus
    G: int
    n_raster: int
    U: np.ndarray
    labels: np.ndarray

    @property
    def h(self) -> float:
        return 1.0 / self.G

    @property
    def c(self) -> float:
        return self.W.c

    @property
    def tail_mass(self) -> float:
        return self.c * tail_area(self.n_raster)

    @property
    def tail_perimeter(self) -> float:
        return self.c * tail_length(self.n_raster)


def audit_grid(W: WeightedTorus, G: int = 2048, min_cells: float = 4.0) -> AuditGrid:
    """Rasterize the balls whose radius spans at least ``min_cells`` cells."""
    h = 1.0 / G
    n_r = int(np.sum(W.balls.radii >= min_cells * h))
    labels = W.balls.label_grid(G, n_r)
    return AuditGrid(W, G, n_r, labels > 0, labels)


def _err(length: float, n_cross: int, weight_mean: float, h: float, directions) -> float:
    return (anisotropy_bound(directions) * length
            + weight_mean * digitization_bound(n_cross / len(directions), h))


# ---------------------------------------------------------------------------
# windows around small components

def _span(idx: np.ndarray, G: int):
    u = np.unique(idx)
    if len(u) == 1:
        return int(u[0]), 1
    gaps = np.diff(np.r_[u, u[0] + G])
    k = int(np.argmax(gaps))
    start = int(u[(k + 1) % len(u)])
    return start, G - int(gaps[k]) + 1


def _window(occ: np.ndarray, pad: int = 4):
    G = occ.shape[0]
    ii, jj = np.nonzero(occ)
    axes = []
    for idx in (ii, jj):
        start, length = _span(idx, G)
        if length + 2 * pad >= G:
            axes.append(np.arange(G))
        else:
            axes.append((start - pad + np.arange(length + 2 * pad)) % G)
    return np.ix_(*axes)


def contact_split(F, labels: np.ndarray, directions=DEFAULT_DIRECTIONS):
    """Euclidean Crofton lengths of the boundary of ``F`` split by the label across it.

    Returns ``(contact_by_label, free, n_cross)`` where ``contact_by_label[i]``
    is the boundary length facing ball ``i`` and ``free`` the length facing
    label 0.
    """
    f = _occ(F)
    if not f.any():
        return np.zeros(labels.max() + 1), 0.0, 0
    win = _window(f)
    fw, lw = f[win], labels[win]
    nlab = int(labels.max()) + 1
    contact = np.zeros(nlab)
    free, n_cross = [], 0
    for (a, b), trans, factor in crofton_pairs(fw, directions, h=1.0 / f.shape[0]):
        # label of the end of each pair that lies outside F
        other = np.where(fw, np.roll(lw, (-a, -b), axis=(0, 1)), lw)[trans]
        cnt = np.bincount(other, minlength=nlab)
        contact[1:] += factor * cnt[1:]
        free.append(factor * cnt[0])
        n_cross += int(trans.sum())
    contact[0] = 0.0
    return contact, math.fsum(free), n_cross


def crofton_count(F, directions=DEFAULT_DIRECTIONS):
    """Unweighted Crofton length and crossing count of a raster."""
    f = _occ(F)
    if not f.any():
        return 0.0, 0
    parts, n = [], 0
    for _, trans, factor in crofton_pairs(f, directions):
        k = int(trans.sum())
        parts.append(factor * k)
        n += k
    return math.fsum(parts), n


# ---------------------------------------------------------------------------
# the three lower bounds

def lemma1_lower_bound(E, grid: AuditGrid, tail_in_E: bool = False,
                       directions=DEFAULT_DIRECTIONS) -> BoundReport:
    """``Per(E cap U)`` against ``phi(m(E cap U))`` on the raster."""
    EU = _occ(E) & grid.U
    c, h = grid.c, grid.h
    length, n = crofton_count(EU, directions)
    per = c * length + (grid.tail_perimeter if tail_in_E else 0.0)
    t = c * int(EU.sum()) * h * h + (grid.tail_mass if tail_in_E else 0.0)
    prof = Profile(c)
    clipped = t > prof.mass_U
    phi = prof(min(t, prof.mass_U))
    err = _err(c * length, n, c, h, directions)
    return BoundReport("per-inside-U", per, phi, per - phi, err,
                       {"mass": t, "mass_clipped": bool(clipped)})


@dataclass
class ProjectionReport(BoundReport):
    case: str = ""
    applicable: bool = True
    diameter: float = 0.0
    contacted: tuple = ()
    touched: tuple = ()

    @property
    def borderline(self) -> bool:
        return set(self.contacted) != set(self.touched)

    @property
    def passed(self) -> bool:
        return (not self.applicable) or self.margin >= -self.error_bound

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(case=self.case, applicable=self.applicable, diameter=self.diameter,
                 contacted=list(self.contacted), touched=list(self.touched),
                 borderline=self.borderline)
        return d


def projection_bound_check(F, grid: AuditGrid, directions=DEFAULT_DIRECTIONS) -> ProjectionReport:
    """Free boundary of a component of ``E minus U`` against its contact with the closed balls.

    Checks ``Per(F; X minus U_c) >= Per(F; U_c) / (4 pi c)``, whose right side is the
    Euclidean contact length over ``4 pi``.  The proof case is read off the
    balls met by the boundary crossings; the balls touched by a one-cell
    dilation of ``F`` are reported next to it, and a mismatch marks a
    borderline contact.
    """
    f = _occ(F) & ~grid.U
    diam = component_diameter(f)
    contact, free, n = contact_split(f, grid.labels, directions)
    contacted = tuple(int(i) for i in np.flatnonzero(contact > 0))
    win = _window(f) if f.any() else None
    touched = ()
    if win is not None:
        dil = ndimage.binary_dilation(f[win], structure=np.ones((3, 3), bool))
        touched = tuple(int(i) for i in np.unique(grid.labels[win][dil]) if i > 0)
    total_contact = math.fsum(contact)
    rhs = total_contact / (4.0 * math.pi)
    radii = grid.W.balls.radii
    notes = {"contact": total_contact, "free": free}
    if not contacted:
        case = "no-contact"
    elif len(contacted) == 1:
        case = "single-ball"
    else:
        k, m = contacted[0], contacted[1]
        notes["separation_term"] = 2 * float(radii[m - 1])
        small = grid.c * contact[k] < 4 * math.pi * grid.c * radii[m - 1]
        case = "multi-ball-small-contact" if small else "multi-ball-large-contact"
    err = _err(free + total_contact, n, 1.0, grid.h, directions)
    return ProjectionReport("contact-projection", free, rhs, free - rhs, err, notes,
                            case=case, applicable=diam < 0.25, diameter=diam,
                            contacted=contacted, touched=touched)


def sqrt_mass_bound_check(E, grid: AuditGrid, extra_disks=(),
                          directions=DEFAULT_DIRECTIONS) -> BoundReport:
    """``Per(E minus U; X minus U_c)`` against ``2 sqrt(pi)/(4 pi + 1) sqrt(m(E minus U))``."""
    EV = _occ(E) & ~grid.U
    h = grid.h
    _, free, n = contact_split(EV, grid.labels, directions) if EV.any() else (None, 0.0, 0)
    free += math.fsum(2 * math.pi * d.r for d in extra_disks)
    s = int(EV.sum()) * h * h + math.fsum(d.area for d in extra_disks)
    rhs = LEMMA_SQRT_CONST * math.sqrt(s)
    err = _err(free, n, 1.0, h, directions) if n else 0.0
    return BoundReport("sqrt-mass", free, rhs, free - rhs, err, {"mass": s})


# ---------------------------------------------------------------------------
# competitors

@dataclass
class Competitor:
    name: str
    occupancy: np.ndarray
    tail_in_E: bool = True
    disks: tuple = ()
    note: str = ""

    @property
    def is_reference(self) -> bool:
        return self.name == "U"


@dataclass
class ChainStep:
    label: str
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


@dataclass
class CompetitorReport:
    name: str
    terms: dict
    steps: list
    final_margin: float
    error_bound: float
    volume_error: float
    verdict: str
    components: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "equality")

    def to_dict(self) -> dict:
        return {"name": self.name, "terms": self.terms,
                "steps": [{"label": s.label, "lhs": s.lhs, "rhs": s.rhs, "margin": s.margin}
                          for s in self.steps],
                "final_margin": self.final_margin, "error_bound": self.error_bound,
                "volume_error": self.volume_error, "verdict": self.verdict,
                "components": [c.to_dict() for c in self.components]}


def raster_terms(occ: np.ndarray, grid: AuditGrid, directions=DEFAULT_DIRECTIONS) -> dict:
    """Weighted perimeters of ``E``, ``E cap U`` and the contact split of ``E minus U`` in one sweep."""
    U, c = grid.U, grid.c
    EU, EV = occ & U, occ & ~U
    w = crofton_weights(directions)
    acc = {k: [] for k in ("E_c", "E_1", "EU", "cont", "free")}
    n = {"E": 0, "EU": 0, "EV": 0}
    for (a, b), wk in zip(directions, w):
        factor = 0.5 * wk * grid.h / math.hypot(a, b)
        Er = np.roll(occ, (-a, -b), axis=(0, 1))
        Ur = np.roll(U, (-a, -b), axis=(0, 1))
        tE = occ != Er
        touchU = U | Ur
        nEc = int(np.count_nonzero(tE & touchU))
        nE1 = int(np.count_nonzero(tE)) - nEc
        acc["E_c"].append(factor * nEc)
        acc["E_1"].append(factor * nE1)
        n["E"] += nEc + nE1
        tEU = EU != (Er & Ur)
        k = int(np.count_nonzero(tEU))
        acc["EU"].append(factor * k)
        n["EU"] += k
        EVr = Er & ~Ur
        tEV = EV != EVr
        far_in_U = np.where(EV, Ur, U)
        kc = int(np.count_nonzero(tEV & far_in_U))
        kf = int(np.count_nonzero(tEV)) - kc
        acc["cont"].append(factor * kc)
        acc["free"].append(factor * kf)
        n["EV"] += kc + kf
    s = {k: math.fsum(v) for k, v in acc.items()}
    per_E = c * s["E_c"] + s["E_1"]
    h2 = grid.h ** 2
    return {"per_E": per_E, "per_EU": c * s["EU"], "contact": s["cont"], "free": s["free"],
            "n_E": n["E"], "n_EU": n["EU"], "n_EV": n["EV"],
            "weight_E": (c * s["E_c"] + s["E_1"]) / max(s["E_c"] + s["E_1"], 1e-300),
            "mass_EU": c * int(EU.sum()) * h2, "mass_EV": int(EV.sum()) * h2}


def competitor_audit(comp: Competitor, grid: AuditGrid, volume_tol: float = VOLUME_TOL,
                     directions=DEFAULT_DIRECTIONS, components: bool = True) -> CompetitorReport:
    """Assemble the lower-bound chain for ``Per(E)`` and compare with ``Per(U)``."""
    W, c, h = grid.W, grid.c, grid.h
    prof = Profile(c)
    occ = np.asarray(comp.occupancy, dtype=bool)
    if occ.shape != grid.U.shape:
        raise ValueError("competitor resolution differs from the audit grid")
    rt = raster_terms(occ, grid, directions)
    tail_p = grid.tail_perimeter if comp.tail_in_E else 0.0
    tail_m = grid.tail_mass if comp.tail_in_E else 0.0
    disk_len = math.fsum(2 * math.pi * d.r for d in comp.disks)
    disk_area = math.fsum(d.area for d in comp.disks)
    per_E = rt["per_E"] + tail_p + disk_len
    P_in = rt["per_EU"] + tail_p
    P_cont = c * rt["contact"]
    P_free = rt["free"] + disk_len
    P_out = P_free + P_cont
    t = rt["mass_EU"] + tail_m
    s = rt["mass_EV"] + disk_area
    mass = t + s
    vol_err = (mass - prof.mass_U) / prof.mass_U
    phi_t = prof(min(t, prof.mass_U))
    k = 2 * math.sqrt(math.pi) * (1 - 4 * math.pi * c) / (4 * math.pi + 1)
    steps = [
        ChainStep("Per(E) >= Per(E&U) + Per(E-U) - 2 Per(E-U;Uc)", per_E, P_in + P_out - 2 * P_cont),
        ChainStep("= Per(E&U) + Per(E-U;X-Uc) - Per(E-U;Uc)", P_in + P_out - 2 * P_cont,
                  P_in + P_free - P_cont),
        ChainStep(">= phi(t) + (1-4pi c) Per(E-U;X-Uc)", P_in + P_free - P_cont,
                  phi_t + (1 - 4 * math.pi * c) * P_free),
        ChainStep(">= phi(t) + k sqrt(s)", phi_t + (1 - 4 * math.pi * c) * P_free,
                  phi_t + k * math.sqrt(s)),
        ChainStep(">= phi(t) + sqrt(s)/(4 sqrt(pi))", phi_t + k * math.sqrt(s),
                  phi_t + GAP_CONST * math.sqrt(s)),
        ChainStep("> phi(m(U)) = Per(U)", phi_t + GAP_CONST * math.sqrt(s), prof.per_U),
    ]
    final = per_E - prof.per_U
    err = _err(per_E - tail_p - disk_len, rt["n_E"], rt["weight_E"], h, directions)
    if s > 0:
        # balls beyond the explicit system may hide under the parts of E in V
        err += tail_length(W.n)
    terms = {"Per(E)": per_E, "Per(E&U)": P_in, "Per(E-U)": P_out, "Per(E-U;Uc)": P_cont,
             "Per(E-U;X-Uc)": P_free, "m(E&U)": t, "m(E-U)": s, "phi(m(E&U))": phi_t,
             "Per(U)": prof.per_U, "final_margin": final}
    reports = []
    if components and rt["mass_EV"] > 0:
        for F in connected_components(occ & ~grid.U):
            reports.append(projection_bound_check(F, grid, directions))
    if abs(vol_err) > volume_tol:
        verdict = "volume-violation"
    elif abs(final) <= err and comp.is_reference:
        verdict = "equality"
    elif final > err:
        verdict = "pass"
    else:
        verdict = "fail"
    return CompetitorReport(comp.name, terms, steps, final, err, vol_err, verdict, reports)


# ---------------------------------------------------------------------------
# competitor generators

def _ball_cells(grid: AuditGrid, j: int):
    """Flat indices and distances of the cells of ball ``j`` sorted by distance to ``x_j``."""
    G = grid.G
    flat = np.flatnonzero(grid.labels.ravel() == j)
    ii, jj = np.divmod(flat, G)
    pts = np.stack([(ii + 0.5) / G, (jj + 0.5) / G], axis=1)
    d = torus_distance(pts, grid.W.balls.centers[j - 1])
    order = np.argsort(d, kind="stable")
    return flat[order], d[order]


def compensate(occ: np.ndarray, grid: AuditGrid, j: int, tail_in_E: bool = True,
               extra_mass: float = 0.0) -> np.ndarray:
    """Replace the content of ball ``j`` by the concentric ball that brings ``m(E)`` to ``m(U)``."""
    flat, d = _ball_cells(grid, j)
    out = occ.copy().ravel()
    out[flat] = False
    h2 = grid.h ** 2
    c = grid.c
    EU = out.reshape(occ.shape) & grid.U
    base = c * int(EU.sum()) * h2 + int((out.reshape(occ.shape) & ~grid.U).sum()) * h2
    base += (grid.tail_mass if tail_in_E else 0.0) + extra_mass
    need = Profile(c).mass_U - base
    k = int(round(need / (c * h2)))
    if k < 0 or k > len(flat):
        raise ValueError(f"ball {j} cannot absorb a mass change of {need:.3g}")
    out[flat[:k]] = True
    return out.reshape(occ.shape)


def _clear_point(grid: AuditGrid, rng, clearance: float):
    B = grid.W.balls
    for _ in range(10_000):
        p = rng.random(2)
        if float(dist_to_ball_union(p, B.centers, B.radii)) > clearance:
            return p
    raise RuntimeError("no clear point found")


def _budget_cells(grid: AuditGrid, fraction: float) -> int:
    return int(fraction * Profile(grid.c).mass_U / grid.h ** 2)


def reference_competitor(grid: AuditGrid) -> Competitor:
    return Competitor("U", grid.U.copy(), True, note="the union of the balls itself")


def disk_in_v(grid: AuditGrid) -> Competitor:
    """A single disk of mass ``m(U)`` at the point farthest from the explicit balls."""
    B = grid.W.balls
    p, _, _ = next_center(B.centers, B.radii)
    r = math.sqrt(Profile(grid.c).mass_U / math.pi)
    return Competitor("disk-in-V", np.zeros_like(grid.U), False, (Disk(float(p[0]), float(p[1]), r),),
                      note="analytic disk in V")


def _bump(grid, j, angle, radius, offset):
    B = grid.W.balls
    x = B.centers[j - 1]
    rr = B.radii[j - 1] + offset
    ctr = ((x[0] + rr * math.cos(angle)) % 1.0, (x[1] + rr * math.sin(angle)) % 1.0)
    return disk_mask(grid.G, ctr, radius)


def ball_perturbation(grid: AuditGrid, rng, idx: int = 0) -> Competitor:
    """``U`` plus one or two small disks straddling ball boundaries, ``B_1`` shrunk to match."""
    h = grid.h
    budget = _budget_cells(grid, 0.6)
    occ = grid.U.copy()
    hosts = list(range(2, grid.n_raster + 1))
    for _ in range(int(rng.integers(1, 3)) if hosts else 0):
        j = int(rng.choice(hosts))
        extra = _bump(grid, j, rng.uniform(0, 2 * math.pi), rng.uniform(1.2, 2.2) * h,
                      rng.uniform(-0.3, 0.7) * 2 * h)
        trial = occ | extra
        if int((trial & ~grid.U).sum()) <= budget:
            occ = trial
    return Competitor(f"perturb-{idx}", compensate(occ, grid, 1), True, note="bumps on ball boundaries")


def random_blob(grid: AuditGrid, rng, idx: int = 0) -> Competitor:
    """A random union of tiny disks in ``V``; the rest of the mass sits in the balls."""
    h = grid.h
    budget = _budget_cells(grid, 0.6)
    p = _clear_point(grid, rng, 20 * h)
    blob = np.zeros_like(grid.U)
    for _ in range(int(rng.integers(2, 5))):
        q = p + rng.normal(scale=1.5 * h, size=2)
        trial = blob | disk_mask(grid.G, q % 1.0, rng.uniform(0.8, 2.0) * h)
        if int(trial.sum()) <= budget:
            blob = trial
    if not blob.any():
        blob = disk_mask(grid.G, p, 1.2 * h)
    if idx % 2 == 0:
        occ = compensate(blob | grid.U, grid, 1, True)
        return Competitor(f"blob-{idx}", occ, True, note="blob in V with U")
    occ = blob | (grid.labels == 2) | (grid.labels == 3)
    occ = compensate(occ, grid, 1, False)
    return Competitor(f"blob-{idx}", occ, False, note="blob in V with three balls")


def adversarial(grid: AuditGrid, rng) -> list[Competitor]:
    """Near-``U`` sets that lean on the contact terms and the profile."""
    h, G, B = grid.h, grid.G, grid.W.balls
    out = []
    # a) one disk centered on the boundary of B_2
    if grid.n_raster >= 2:
        occ = grid.U | _bump(grid, 2, rng.uniform(0, 2 * math.pi), 2.0 * h, 0.0)
        out.append(Competitor("edge-bump", compensate(occ, grid, 1), True, note="disk centered on dB_2"))
    # b) a one-cell ring hugging the smallest rasterized ball
    j = grid.n_raster
    U_, V_ = cell_centers(G)
    du, dv = wrap_delta(U_ - B.centers[j - 1][0]), wrap_delta(V_ - B.centers[j - 1][1])
    rad, ang = np.hypot(du, dv), np.arctan2(dv, du)
    ring = (rad >= B.radii[j - 1]) & (rad < B.radii[j - 1] + 1.1 * h) & ~grid.U
    budget = _budget_cells(grid, 0.6)
    cells = np.flatnonzero(ring.ravel())
    keep = cells[np.argsort(ang.ravel()[cells], kind="stable")][:budget]
    hug = np.zeros(G * G, bool)
    hug[keep] = True
    out.append(Competitor("hugging-arc", compensate(grid.U | hug.reshape(G, G), grid, 1), True,
                          note=f"arc around B_{j}"))
    # c) small bumps on up to three different balls
    hosts = list(range(3, min(5, grid.n_raster) + 1)) or list(range(2, grid.n_raster + 1))
    if hosts:
        occ = grid.U.copy()
        for jj in hosts:
            occ |= _bump(grid, jj, rng.uniform(0, 2 * math.pi), 1.2 * h, 0.5 * h)
        names = ", ".join(f"B_{jj}" for jj in hosts)
        out.append(Competitor("three-bumps", compensate(occ, grid, 1), True, note=f"bumps on {names}"))
    # d) B_1 replaced by a square of nearly equal mass, corners poking into V
    # the center is nudged off the lattice so corner cells enter one at a time
    x1 = B.centers[0] + np.array([0.31, 0.17]) * h
    target = grid.c * math.pi * B.radii[0] ** 2
    base = grid.U & (grid.labels != 1)

    U_, V_ = cell_centers(G)
    cheb = np.maximum(np.abs(wrap_delta(U_ - x1[0])), np.abs(wrap_delta(V_ - x1[1]))).ravel()
    order = np.argsort(cheb, kind="stable")
    cell_mass = np.where(grid.U.ravel()[order], grid.c, 1.0) * h * h
    # smallest square (cells with cheb < side/2) whose mass reaches m(B_1)
    k = int(np.searchsorted(np.cumsum(cell_mass), target))
    sc = cheb[order]
    nxt = sc[min(int(np.searchsorted(sc, sc[k], side="right")), len(sc) - 1)]
    half = 0.5 * (sc[k] + nxt)
    hi = 2 * half
    # the small excess over m(B_1) is taken out of B_2
    sq = rect_mask(G, x1, hi, hi)
    out.append(Competitor("square-for-B1", compensate(base | sq, grid, 2 if grid.n_raster >= 2 else 1), True,
                          note=f"square side {hi:.6g}"))
    return out


def standard_competitors(grid: AuditGrid, seed: int = 0, n_perturb: int = 10,
                         n_blobs: int = 10) -> list[Competitor]:
    rng = np.random.default_rng(seed)
    comps = [reference_competitor(grid), disk_in_v(grid)]
    comps += [ball_perturbation(grid, rng, i) for i in range(n_perturb)]
    comps += [random_blob(grid, rng, i) for i in range(n_blobs)]
    comps += adversarial(grid, rng)
    return comps


def competitor_from_raster(E, grid: AuditGrid, name: str = "raster", tail_in_E: bool = True) -> Competitor:
    occ = _occ(E)
    if occ.shape != grid.U.shape:
        raise ValueError(f"raster resolution {occ.shape[0]} differs from audit grid {grid.G}")
    return Competitor(name, occ, tail_in_E)
