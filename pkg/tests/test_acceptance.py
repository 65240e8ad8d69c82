"""The twelve acceptance criteria, one test each.

Every test records a ``CRITERION nn: PASS|FAIL`` line before asserting; the
lines are printed together at the end of the run.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, smooth_field
from isoworkbench import audit
from isoworkbench.construction import C_DEFAULT, Profile, build_packing, verify_phi_gap, verify_separation
from isoworkbench.dcalc import (MCPParams, check_dcalc_rules, check_deformation, check_laplacian_bound,
                                mcp_constant, random_deformation_cases, ring_analysis)
from isoworkbench.perimeter import RasterSet, coarea_check, perimeter_raster
from isoworkbench.rearrangement import exhaustive_cascade_check
from isoworkbench.shapes import Disk, ShapeSet, disk_mask, random_disk_union
from isoworkbench.torus import RingStencil, distance_field


def criterion(n, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {n:02d}: {'PASS' if ok else 'FAIL'}  {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert ok, detail


def test_criterion_01_separation():
    t0 = time.perf_counter()
    B = build_packing(20, (0.0, 0.0))
    elapsed = time.perf_counter() - t0
    rep = verify_separation(B)
    ks = [e.k for e in rep.entries]
    strict = all(e.delta >= e.bound for e in rep.entries)
    ok = ks == list(range(2, 21)) and strict and rep.passed and elapsed <= 60
    criterion(1, ok, f"delta_k >= 2 r_k for k = 2..20, min ratio {rep.min_ratio:.4f}, build {elapsed:.1f} s")


def test_criterion_02_profile_identities():
    prof = Profile()
    mU = C_DEFAULT * math.pi / 48
    zero = prof(0.0) == 0.0
    top = abs(prof(mU) - C_DEFAULT * math.pi / 2) / (C_DEFAULT * math.pi / 2)
    jumps = max(prof.branch_jump(k) for k in range(1, 13))
    ok = zero and top <= 1e-12 and jumps <= 1e-12 and prof.mass_U == pytest.approx(mU, rel=1e-15)
    criterion(2, ok, f"phi(0) = 0: {zero}, phi(m(U)) rel err {top:.1e}, max branch jump {jumps:.1e}")


def test_criterion_03_phi_gap():
    rep = verify_phi_gap(10_000)
    mU = Profile().mass_U
    ends = rep.samples.min() <= 1e-9 * mU and rep.samples.max() >= mU * (1 - 1e-9)
    ok = rep.min_margin > 0 and ends and rep.n_samples >= 10_000
    criterion(3, ok, f"min margin {rep.min_margin:.3e} over {rep.n_samples} samples incl. both endpoints")


def test_criterion_04_rearrangement_oracle():
    rep = exhaustive_cascade_check(3, 16)
    ok = rep.passed and rep.n_cases == 17 ** 3 - 1
    criterion(4, ok, f"{rep.n_cases} vectors, vs brute {rep.worst_vs_brute:.1e}, vs phi {rep.worst_vs_profile:.1e}, "
                     f"drift {rep.max_mass_drift:.1e}, monotone {rep.all_monotone}")


def test_criterion_05_competitors(grid2048):
    comps = audit.standard_competitors(grid2048, seed=0)
    reports = [audit.competitor_audit(cp, grid2048) for cp in comps]
    ref, others = reports[0], reports[1:]
    equality = ref.name == "U" and abs(ref.final_margin) <= ref.error_bound
    bad = [r.name for r in others if not r.final_margin > r.error_bound]
    worst = min(r.final_margin / r.error_bound for r in others)
    ok = len(others) == 25 and equality and not bad
    criterion(5, ok, f"25 competitors at G = 2048, U equality {equality}, failures {bad}, "
                     f"min margin/error {worst:.2f}")


def test_criterion_06_euclidean_surrogate():
    G = 1024
    rng = np.random.default_rng(2024)
    worst = math.inf
    for _ in range(100):
        occ = random_disk_union(rng).mask(G)
        est = perimeter_raster(RasterSet(occ))
        lower = 2 * math.sqrt(math.pi) * math.sqrt(occ.mean())
        worst = min(worst, est.value + est.error_bound - lower)
    disk = perimeter_raster(RasterSet(disk_mask(G, (0.5, 0.5), 0.1))).value
    rel = abs(disk / (2 * math.pi * 0.1) - 1)
    ok = worst >= 0 and rel <= 0.01
    criterion(6, ok, f"100 disk unions, min slack {worst:.3e}; disk 0.1 rel err {rel:.2e}")


def test_criterion_07_coarea():
    rep = coarea_check(distance_field((0.3, 0.6), 1024), n_levels=256, tolerance=0.01)
    ok = rep.passed and abs(rep.lhs - rep.rhs) <= 0.01 * max(rep.lhs, rep.rhs) and abs(rep.lhs - 1) <= 0.01
    criterion(7, ok, f"int lip = {rep.lhs:.5f}, int Per = {rep.rhs:.5f}")


def test_criterion_08_dcalc():
    G = 512
    st = RingStencil(G, 1.0 / G, 32)
    failures = []
    for seed in range(20):
        f, g, h = (smooth_field(G, 1000 + 3 * seed + i, off) for i, off in enumerate((1.5, 2.0, 1.5)))
        rep = check_dcalc_rules(f, g, h, st)
        failures += [f"{seed}:{r.name}" for r in rep.rows if not r.passed]
        an = ring_analysis(f, st)
        plus, minus = an.pair(f)
        if not (np.array_equal(plus, an.slope ** 2) and np.array_equal(minus, an.slope ** 2)):
            failures.append(f"{seed}:self-pairing")
    criterion(8, not failures, f"20 field triples at G = 512, failing rows {failures}")


def test_criterion_09_laplacian_sharpness():
    t0 = time.perf_counter()
    flat = check_laplacian_bound((0.5, 0.5), 0.4, 4.05, n_tests=50, G=512)
    t1 = time.perf_counter()
    low = check_laplacian_bound((0.5, 0.5), 0.4, 3.80, n_tests=50, G=512)
    t2 = time.perf_counter()
    ok = flat.passed and not low.passed and t1 - t0 <= 120 and t2 - t1 <= 120
    criterion(9, ok, f"C = 4.05: {flat.summary()} ({t1 - t0:.0f} s); C = 3.80: {low.summary()} ({t2 - t1:.0f} s)")


def test_criterion_10_deformation():
    rep = check_deformation(ShapeSet().add(Disk(0.5, 0.5, 0.2)), (0.5, 0.5), 0.1, 4.0, G=1024)
    rel = abs(rep.lhs_12 - rep.rhs_12) / rep.rhs_12
    cases = [check_deformation(E, x, r, 4.0) for E, x, r in random_deformation_cases(20, seed=0)]
    worst = min(min(c.margin_11, c.margin_12) for c in cases)
    # a ball inside E is an exact equality, so its margin is zero up to the rounding bound
    signed = all(min(c.margin_11, c.margin_12) >= -c.error_bound for c in cases)
    bound = max(c.error_bound for c in cases)
    ok = rel <= 0.005 and len(cases) == 20 and signed
    criterion(10, ok, f"concentric equality rel gap {rel:.2e} at G = 1024; min margin over 20 cases "
                      f"{worst:.3e} (rounding bound {bound:.1e})")


def test_criterion_11_mcp_constant():
    flat = all(mcp_constant(MCPParams(0.0, N, R)) == 2 * N for N in (2.0, 3.5, 7.0) for R in (0.3, 1.0, 5.0))
    q = math.sqrt(1.0 / 2.0)
    independent = 2 * (1 + 2 * q / math.tanh(q))
    hyp = abs(mcp_constant(MCPParams(-1.0, 3.0, 1.0)) - independent)
    pos = mcp_constant(MCPParams(1.0, 3.0, 1.0)) == 6.0
    try:
        MCPParams(1.0, 3.0, 5.0)
        rejects = False
    except ValueError:
        rejects = True
    ok = flat and hyp <= 1e-10 and pos and rejects
    criterion(11, ok, f"flat 2N {flat}, C(-1,3,1) = {independent:.12f} err {hyp:.1e}, K > 0: {pos}, rejects {rejects}")


def test_criterion_12_determinism(all_runs):
    codes, dirs = all_runs
    a, b = ((d / "report.json").read_bytes() for d in dirs)
    n = json.loads(a)["summary"]["checks"]
    ok = a == b and codes == [0, 0]
    criterion(12, ok, f"two 'all' runs, {n} checks, identical bytes {a == b}, exit codes {codes}")
