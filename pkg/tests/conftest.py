import os

import numpy as np
import pytest

from isoworkbench.construction import WeightedTorus, build_packing
from isoworkbench.torus import ScalarField, cell_centers

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def packing20():
    return build_packing(20)


@pytest.fixture(scope="session")
def W20(packing20):
    return WeightedTorus(packing20)


@pytest.fixture(scope="session")
def grid2048(W20):
    from isoworkbench.audit import audit_grid
    return audit_grid(W20, 2048)


@pytest.fixture(scope="session")
def all_runs(tmp_path_factory):
    """Two default ``all`` runs into separate directories: (exit codes, dirs)."""
    from isoworkbench.cli import main
    saved = os.environ.pop("ISO_WORKBENCH_OUT", None)
    try:
        dirs = [tmp_path_factory.mktemp(name) for name in ("all_a", "all_b")]
        codes = [main(["all", "--out", str(d)]) for d in dirs]
    finally:
        if saved is not None:
            os.environ["ISO_WORKBENCH_OUT"] = saved
    return codes, dirs


def smooth_field(G, seed, offset=0.0, kmax=2, amp=0.2, terms=4):
    """Low-frequency trigonometric field on the G x G grid."""
    rng = np.random.default_rng(seed)
    U, V = cell_centers(G)
    v = np.full((G, G), float(offset))
    for _ in range(terms):
        k = rng.integers(-kmax, kmax + 1, 2)
        v += rng.normal() * amp * np.cos(2 * np.pi * (k[0] * U + k[1] * V) + rng.uniform(0, 2 * np.pi))
    return ScalarField(v)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
