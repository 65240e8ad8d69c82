"""Verification suites behind the command-line subcommands.

Each suite takes a ``RunConfig`` and a dict of subcommand options and returns
a ``SuiteResult``.  Suites are pure functions of their inputs.
"""
from __future__ import annotations

import math
import time

import numpy as np

from . import audit, dcalc
from .construction import (Profile, WeightedTorus, build_packing, covering_radius,
                           verify_phi_gap, verify_separation)
from .perimeter import RasterSet, coarea_check, perimeter_raster
from .rearrangement import VolumeVector, exhaustive_cascade_check, profile_lower_bound_volumes
from .report import CheckRecord, SuiteResult, packing_svg, raster_overlay_svg
from .shapes import Disk, Rect, ShapeSet, disk_mask, random_disk_union
from .torus import RingStencil, ScalarField, cell_centers, distance_field

EPS = np.finfo(float).eps
# one cell of V outweighs m(U) below G ~ 1024, so sets with mass in V need a finer audit grid
MIN_AUDIT_GRID = 2048


def grid_tolerance(G: int) -> float:
    """Relative tolerance of first-order grid estimates: 1% at G = 1024, scaling like h."""
    return 0.01 * max(1.0, 1024.0 / G)


class _Timer:
    def __init__(self):
        self.t = time.perf_counter()

    def ms(self) -> float:
        now = time.perf_counter()
        out, self.t = 1e3 * (now - self.t), now
        return out


def _packing(config):
    B = build_packing(config.balls)
    return B, WeightedTorus(B)


def run_pack(config, opts) -> SuiteResult:
    tm = _Timer()
    B, _ = _packing(config)
    rep = verify_separation(B)
    res = SuiteResult("pack")
    worst = min((e.disjoint_margin for e in rep.entries), default=math.inf)
    res.records.append(CheckRecord("pack.disjoint", "construction", worst if math.isfinite(worst) else 1.0, 0.0,
                                   0.0, "ge", {"n": B.n}, tm.ms()))
    res.tables["balls.csv"] = (("index", "u", "v", "radius"),
                               [(i + 1, float(c[0]), float(c[1]), float(r)) for i, (c, r)
                                in enumerate(zip(B.centers, B.radii))])
    res.figures["packing.svg"] = packing_svg(B.centers, B.radii)
    return res


def run_verify_separation(config, opts) -> SuiteResult:
    tm = _Timer()
    B, _ = _packing(config)
    rep = verify_separation(B)
    res = SuiteResult("verify-separation")
    ms = tm.ms()
    for e in rep.entries:
        # strict inequality is what the lemma needs; no slack on computed coordinates
        res.records.append(CheckRecord(f"separation.k{e.k:02d}", "separation", e.delta, e.bound, 0.0, "ge",
                                       {"disjoint_margin": e.disjoint_margin}, ms / max(1, len(rep.entries))))
    if B.n >= 4:
        half = B.prefix(B.n // 2)
        r_half, r_full = covering_radius(half), covering_radius(B)
        res.records.append(CheckRecord("density.covering-radius", "density", r_full, r_half, 0.0, "le",
                                       {"n_half": half.n, "n": B.n}, tm.ms()))
    return res


def run_profile(config, opts) -> SuiteResult:
    tm = _Timer()
    prof = Profile()
    res = SuiteResult("profile")
    n = int(opts.get("samples") or 101)
    ts = [prof.mass_U * i / (n - 1) for i in range(n)] if n > 1 else [0.0]
    rows = [(t, prof(t), prof.sample(t).k_t) for t in ts]
    if rows[-1][0] != prof.mass_U:
        rows.append((prof.mass_U, prof(prof.mass_U), prof.sample(prof.mass_U).k_t))
    res.tables["profile.csv"] = (("t", "phi", "branch"), rows)
    res.records.append(CheckRecord("profile.phi-0", "profile", prof(0.0), 0.0, 0.0, "eq", {}, tm.ms()))
    top = prof(prof.mass_U)
    res.records.append(CheckRecord("profile.phi-mU", "profile", top, prof.per_U, 1e-12 * prof.per_U, "eq",
                                   {"mass_U": prof.mass_U}, tm.ms()))
    jumps = [prof.branch_jump(k) for k in range(1, 13)]
    res.records.append(CheckRecord("profile.continuity", "profile", max(jumps), 0.0, 1e-12, "le",
                                   {"branch_points": 12}, tm.ms()))
    return res


def run_phi_gap(config, opts) -> SuiteResult:
    tm = _Timer()
    n = int(opts.get("samples") or 10_000)
    rep = verify_phi_gap(max(n, 2))
    res = SuiteResult("phi-gap")
    res.records.append(CheckRecord("phi-gap.min-margin", "phi-gap", rep.min_margin, 0.0, 0.0, "ge",
                                   {"n_samples": rep.n_samples, "argmin_t": rep.argmin_t}, tm.ms()))
    return res


def run_perimeter(config, opts) -> SuiteResult:
    tm = _Timer()
    G = config.grid
    res = SuiteResult("perimeter")
    est = perimeter_raster(RasterSet(disk_mask(G, (0.5, 0.5), 0.1)))
    exact = 2 * math.pi * 0.1
    res.records.append(CheckRecord("perimeter.disk", "perimeter", est.value, exact, grid_tolerance(G) * exact, "eq",
                                   {"G": G, "error_bound": est.error_bound}, tm.ms()))
    rng = np.random.default_rng(config.seed)
    n = int(opts.get("samples") or 20)
    for i in range(n):
        S = random_disk_union(rng)
        E = S.rasterize(G)
        est = perimeter_raster(E)
        lhs = 2 * math.sqrt(math.pi) * math.sqrt(E.area())
        res.records.append(CheckRecord(f"perimeter.isoperimetric.{i:03d}", "perimeter", lhs, est.value,
                                       est.error_bound, "le", {"disks": len(S.items)}, tm.ms()))
    return res


def run_coarea(config, opts) -> SuiteResult:
    tm = _Timer()
    G = config.grid
    f = distance_field((0.5, 0.5), G)
    rep = coarea_check(f, n_levels=256, tolerance=grid_tolerance(G))
    res = SuiteResult("coarea")
    res.records.append(CheckRecord("coarea.distance", "coarea", rep.lhs, rep.rhs,
                                   rep.tolerance * max(abs(rep.lhs), abs(rep.rhs)), "eq",
                                   {"gap": rep.gap, "levels": rep.n_levels}, tm.ms()))
    return res


def run_rearrange(config, opts) -> SuiteResult:
    tm = _Timer()
    res = SuiteResult("rearrange")
    a = exhaustive_cascade_check(3, 16)
    ms = tm.ms()
    details = {"cases": a.n_cases, "max_mass_drift": a.max_mass_drift, "monotone": a.all_monotone}
    res.records.append(CheckRecord("rearrange.cascade-vs-brute", "rearrangement", a.worst_vs_brute, 0.0,
                                   1e-12, "le", details, ms))
    res.records.append(CheckRecord("rearrange.cascade-vs-profile", "rearrangement", a.worst_vs_profile, 0.0,
                                   1e-12, "le", details, 0.0))
    res.records.append(CheckRecord("rearrange.monotone", "rearrangement", float(a.all_monotone), 1.0, 0.0, "eq",
                                   {"max_mass_drift": a.max_mass_drift}, 0.0))
    _, W = _packing(config)
    rng = np.random.default_rng(config.seed)
    for i in range(5):
        frac = rng.uniform(0, 1, min(W.n, 6))
        rep = profile_lower_bound_volumes(VolumeVector.from_fractions(frac, W), W)
        res.records.append(CheckRecord(f"rearrange.profile-bound.{i}", "rearrangement", rep.lhs, rep.rhs,
                                       rep.error_bound, "ge", {"mass": rep.notes["mass"]}, tm.ms()))
    return res


def run_compete(config, opts) -> SuiteResult:
    tm = _Timer()
    res = SuiteResult("compete")
    _, W = _packing(config)
    grid = audit.audit_grid(W, max(config.grid, MIN_AUDIT_GRID))
    comps = audit.standard_competitors(grid, seed=config.seed)
    if opts.get("set"):
        E = RasterSet.from_pbm(opts["set"])
        comps.append(audit.competitor_from_raster(E, grid, name="user-set"))
    for i, comp in enumerate(comps):
        rep = audit.competitor_audit(comp, grid, volume_tol=config.volume_tol)
        tag = f"compete.{i:02d}.{comp.name}"
        details = {"name": comp.name, "verdict": rep.verdict, "final_margin": rep.final_margin,
                   "steps": [(st.label, st.margin) for st in rep.steps]}
        if comp.is_reference:
            rec = CheckRecord(tag, "competitor", rep.terms["Per(E)"], rep.terms["Per(U)"], rep.error_bound,
                              "eq", details, tm.ms())
        else:
            # Per(E) - Per(U) must clear its own error bound
            rec = CheckRecord(tag, "competitor", rep.final_margin, rep.error_bound, 0.0, "ge", details, tm.ms())
        res.records.append(rec)
        res.records.append(CheckRecord(tag + ".volume", "competitor", abs(rep.volume_error), config.volume_tol,
                                       0.0, "le", {}, 0.0))
        for j, pr in enumerate(rep.components):
            res.records.append(CheckRecord(f"{tag}.component{j:02d}", "sqrt-mass", pr.lhs, pr.rhs,
                                           pr.error_bound, "ge", {"case": pr.case}, 0.0))
        if comp.name == "disk-in-V" or i == 2:
            res.figures[f"competitor_{i:02d}.svg"] = raster_overlay_svg(comp.occupancy, grid.U)
    E = comps[2].occupancy if len(comps) > 2 else grid.U
    lb = audit.lemma1_lower_bound(E, grid, tail_in_E=True)
    res.records.append(CheckRecord("compete.per-inside-U", "rearrangement", lb.lhs, lb.rhs, lb.error_bound, "ge",
                                   {}, tm.ms()))
    sq = audit.sqrt_mass_bound_check(E, grid)
    res.records.append(CheckRecord("compete.sqrt-mass", "sqrt-mass", sq.lhs, sq.rhs, sq.error_bound, "ge",
                                   {"mass": sq.notes["mass"]}, tm.ms()))
    return res


def _smooth(G, rng, offset, kmax=2, amp=0.2):
    U, V = cell_centers(G)
    v = np.full((G, G), float(offset))
    for _ in range(4):
        k = rng.integers(-kmax, kmax + 1, 2)
        v += rng.normal() * amp * np.cos(2 * np.pi * (k[0] * U + k[1] * V) + rng.uniform(0, 2 * np.pi))
    return ScalarField(v)


def random_smooth_triple(G: int, rng):
    """``(f, g, h)`` of low-frequency trigonometric fields, all positive."""
    return _smooth(G, rng, 1.5), _smooth(G, rng, 2.0), _smooth(G, rng, 1.5)


def run_dcalc_rules(config, opts) -> SuiteResult:
    tm = _Timer()
    G = config.grid
    res = SuiteResult("dcalc-rules")
    rng = np.random.default_rng(config.seed)
    st = RingStencil(G, 1.0 / G, 32)
    n = int(opts.get("samples") or 3)
    anchor = {"chain": "chain-rule", "leibniz": "leibniz"}
    for i in range(n):
        f, g, h = random_smooth_triple(G, rng)
        rep = dcalc.check_dcalc_rules(f, g, h, st)
        for row in rep.rows:
            res.records.append(CheckRecord(f"dcalc.{i:02d}.{row.name}", anchor.get(row.name, "pairing-rules"),
                                           row.worst, 0.0, row.tolerance + config.eps_grid, "le",
                                           {"cells": row.cells}, tm.ms()))
    f, g, _ = random_smooth_triple(G, rng)
    D = dcalc.d_fields(f, g, st)
    res.records.append(CheckRecord("dcalc.eps-monotone", "pairing", D.monotone_violation, 0.0,
                                   D.tolerance + config.eps_grid, "le",
                                   {"upper_bound_gap": D.upper_bound_gap}, tm.ms()))
    an = dcalc.ring_analysis(f, st)
    p, m = an.pair(f)
    exact = float(max(np.max(np.abs(p - an.slope ** 2)), np.max(np.abs(m - an.slope ** 2))))
    res.records.append(CheckRecord("dcalc.self-pairing", "pairing", exact, 0.0, 0.0, "le", {}, tm.ms()))
    return res


def run_laplacian(config, opts) -> SuiteResult:
    tm = _Timer()
    x = opts.get("center") or (0.5, 0.5)
    R = float(opts.get("radius") or 0.4)
    C = float(opts.get("C") or 4.05)
    G = min(config.grid, 512) if opts.get("grid_cap", True) else config.grid
    n = int(opts.get("samples") or 50)
    chk = dcalc.check_laplacian_bound(x, R, C, n_tests=n, seed=config.seed, G=G)
    res = SuiteResult("laplacian")
    ms = tm.ms() / max(1, n)
    for i, (tf, l, r, e) in enumerate(zip(chk.test_functions, chk.lhs, chk.rhs, chk.eps_quad)):
        eq = max(e, config.eps_quad)
        res.records.append(CheckRecord(f"laplacian.{i:03d}.{tf.kind}", "laplacian", l, r, eq * abs(l), "le",
                                       {"C": C, "R": R, "eps_quad": eq}, ms))
    mol = dcalc.mollifier_family((0.5, 0.5), 0.2, 32.0, G)
    d = distance_field((0.5, 0.5), G).values
    shell = float(np.sum((d > 0.2) & (d < 0.2 + 1 / 32.0))) / G ** 2
    l1 = float(np.sum(np.abs(mol.values - (d < 0.2)))) / G ** 2
    res.records.append(CheckRecord("laplacian.mollifier-l1", "mollifier", l1, shell, 4.0 / G, "le", {}, tm.ms()))
    return res


def run_deform(config, opts) -> SuiteResult:
    tm = _Timer()
    res = SuiteResult("deform")
    C = float(opts.get("C") or 4.0)
    G = config.grid

    def add(tag, rep):
        d = {"path": rep.path, "r": rep.r}
        res.records.append(CheckRecord(f"deform.{tag}.ball", "deformation-ball", rep.lhs_11, rep.rhs_11,
                                       rep.error_bound, "le", d, tm.ms()))
        res.records.append(CheckRecord(f"deform.{tag}.removal", "deformation-removal", rep.lhs_12, rep.rhs_12,
                                       rep.error_bound, "le", d, tm.ms()))

    conc = dcalc.check_deformation(ShapeSet(((1, Disk(0.5, 0.5, 0.2)),)), (0.5, 0.5), 0.1, 4.0, G=G)
    res.records.append(CheckRecord("deform.concentric-equality", "deformation-removal", conc.lhs_12, conc.rhs_12,
                                   0.005 * conc.rhs_12, "eq", {"G": G}, tm.ms()))
    if opts.get("center") is not None and opts.get("radius") is not None:
        E = ShapeSet.load(opts["set"]) if opts.get("set") else ShapeSet(((1, Disk(0.5, 0.5, 0.2)),))
        add("user", dcalc.check_deformation(E, opts["center"], float(opts["radius"]), C, G=G))
    for i, (E, x, r) in enumerate(dcalc.random_deformation_cases(20, config.seed)):
        add(f"random.{i:02d}", dcalc.check_deformation(E, x, r, C))
    add("square-corner", dcalc.check_deformation(Rect(0.5, 0.5, 0.3, 0.3), (0.35, 0.35), 0.05, C))
    return res


def run_mcp_const(config, opts) -> SuiteResult:
    tm = _Timer()
    K, N, R = float(opts.get("K", 0.0)), float(opts.get("N", 2.0)), float(opts.get("R", 1.0))
    p = dcalc.MCPParams(K, N, R)
    val = dcalc.mcp_constant(p)
    res = SuiteResult("mcp-const")
    if K == 0:
        ref = 2 * N
    elif K < 0:
        q = math.sqrt(-K / (N - 1)) * R
        ref = 2 * (1 + (N - 1) * q * math.cosh(q) / math.sinh(q))
    else:
        ref = 2 * N
    res.records.append(CheckRecord("mcp.constant", "mcp-constant", val, ref, 1e-10 * abs(ref), "eq",
                                   {"K": K, "N": N, "R": R}, tm.ms()))
    res.value = val
    return res


SUITES = {
    "pack": run_pack,
    "verify-separation": run_verify_separation,
    "profile": run_profile,
    "phi-gap": run_phi_gap,
    "perimeter": run_perimeter,
    "coarea": run_coarea,
    "rearrange": run_rearrange,
    "compete": run_compete,
    "dcalc-rules": run_dcalc_rules,
    "laplacian": run_laplacian,
    "deform": run_deform,
    "mcp-const": run_mcp_const,
}
