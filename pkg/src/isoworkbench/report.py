"""Run configuration, check records and the JSON / CSV / SVG writers.

A report is a list of check records sorted by id.  The JSON file holds
nothing that depends on the wall clock; runtimes go to a separate
``*.meta.json`` file so that identical configurations give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"
ENV_OUT = "ISO_WORKBENCH_OUT"

# tag and quote for every result a check can point at
ANCHORS = {
    "construction": ("greedy construction", "maximising the distance to"),
    "separation": ("separation lemma", "dist(x_k, ⋃ B_i) ≥ 2r_k"),
    "density": ("density lemma", "The set U is dense in V"),
    "profile": ("profile of the ball family", "let k_t ∈ ℕ be the index"),
    "phi-gap": ("profile gap lemma", "φ(t) + (1/(4√π))√(m(U)−t)"),
    "rearrangement": ("perimeter inside U", "Per(E∩U) ≥ φ(m(E∩U))"),
    "sqrt-mass": ("perimeter outside U", "(2√π/(4π+1))√(m(E∖U))"),
    "competitor": ("U is isoperimetric", "Suppose that Per(E) < Per(U)"),
    "coarea": ("coarea formula", "Fleming–Rishel coarea formula"),
    "perimeter": ("relative perimeter", "Per(E;Ω)"),
    "pairing": ("one-sided pairing", "lip(g+εf)²(x) − lip(g)²(x)"),
    "pairing-rules": ("calculus of the pairing", "D⁻f(∇g) ≤ D⁺f(∇g)"),
    "chain-rule": ("chain rule for the pairing", "D⁺f(∇g²) = 2g D⁺f(∇g)"),
    "leibniz": ("Leibniz rule for the pairing", "D⁺(fh)(∇g) ≤ f D⁺h(∇g) + h D⁺f(∇g)"),
    "laplacian": ("upper Laplacian bound", "−∫_Ω D⁺f(∇g) dm ≤ ∫_Ω f dμ"),
    "mollifier": ("auxiliary Lipschitz function", "auxiliary k-Lipschitz function φ_k^r"),
    "deformation-ball": ("deformation inequality, ball boundary",
                         "Per(B(x,r);E) ≤ C m(E∩B(x,r))/(2r) + Per(E;B(x,r))"),
    "deformation-removal": ("deformation inequality, ball removal",
                            "Per(E∖B(x,r)) ≤ C m(E∩B(x,r))/(2r) + Per(E)"),
    "mcp-constant": ("curvature constant", "C(K,N,R) := sup 2(1+(N−1) r s′_{K/(N−1)}(r)/s_{K/(N−1)}(r))"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    grid: int = 256
    balls: int = 20
    seed: int = 0
    eps_grid: float = 1e-9
    eps_quad: float = 1e-6
    volume_tol: float = 1e-3
    workers: int = 1
    out: str = "isoworkbench-out"

    def __post_init__(self):
        if not 64 <= self.grid <= 8192:
            raise ConfigError(f"grid must lie in [64, 8192], got {self.grid}")
        if not 1 <= self.balls <= 24:
            raise ConfigError(f"balls must lie in [1, 24], got {self.balls}")
        for name in ("eps_grid", "eps_quad", "volume_tol"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"tolerance {name} must be positive, got {v}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def tolerances(self) -> dict:
        return {"eps_grid": self.eps_grid, "eps_quad": self.eps_quad, "volume_tol": self.volume_tol}

    def to_dict(self) -> dict:
        # the output path and worker count do not change any number in the report
        return {"grid": self.grid, "balls": self.balls, "seed": self.seed, "tolerances": self.tolerances}


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


@dataclass
class CheckRecord:
    """One verified inequality or identity.

    ``orientation`` is ``"le"`` for ``lhs <= rhs``, ``"ge"`` for ``lhs >= rhs``
    and ``"eq"`` for ``lhs == rhs``; the margin is oriented so that a check
    passes iff ``margin >= -error_bound``.
    """

    id: str
    anchor: str
    lhs: float
    rhs: float
    error_bound: float
    orientation: str = "le"
    details: dict = field(default_factory=dict)
    runtime_ms: float = 0.0

    def __post_init__(self):
        if self.anchor not in ANCHORS:
            raise ValueError(f"unknown anchor {self.anchor!r}")
        if self.orientation not in ("le", "ge", "eq"):
            raise ValueError(f"bad orientation {self.orientation!r}")

    @property
    def margin(self) -> float:
        if self.orientation == "le":
            return float(self.rhs - self.lhs)
        if self.orientation == "ge":
            return float(self.lhs - self.rhs)
        return -abs(float(self.lhs - self.rhs))

    @property
    def verdict(self) -> str:
        return "pass" if self.margin >= -self.error_bound else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        tag, quote = ANCHORS[self.anchor]
        return _clean({"id": self.id, "paper_anchor": {"tag": tag, "quote": quote},
                       "lhs": self.lhs, "rhs": self.rhs, "orientation": self.orientation,
                       "margin": self.margin, "error_bound": self.error_bound,
                       "verdict": self.verdict, "details": self.details})


@dataclass
class SuiteResult:
    name: str
    records: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)     # file name -> (header, rows)
    figures: dict = field(default_factory=dict)    # file name -> svg text
    error: str = ""

    @property
    def passed(self) -> bool:
        return not self.error and all(r.passed for r in self.records)


def output_dir(cli_out: str | None, default: str) -> Path:
    return Path(os.environ.get(ENV_OUT) or cli_out or default)


def report_dict(config: RunConfig, suites: list) -> dict:
    records = sorted((r for s in suites for r in s.records), key=lambda r: r.id)
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "suites": [s.name for s in suites],
        "errors": {s.name: s.error for s in suites if s.error},
        "records": [r.to_dict() for r in records],
        "summary": {"checks": len(records), "failed": sum(not r.passed for r in records),
                    "passed": all(s.passed for s in suites)},
    }


def write_report(config: RunConfig, suites: list, out: Path, stem: str = "report") -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.json"
    path.write_text(json.dumps(report_dict(config, suites), indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    meta = {"runtime_ms": {r.id: r.runtime_ms for s in suites for r in s.records}}
    (out / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_margins_csv(suites, out / f"{stem}_margins.csv")
    for s in suites:
        for name, (header, rows) in s.tables.items():
            write_csv(out / name, header, rows)
        for name, svg in s.figures.items():
            (out / name).write_text(svg)
    return path


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_margins_csv(suites, path: Path) -> None:
    rows = [(r.id, r.lhs, r.rhs, r.margin, r.error_bound, r.verdict)
            for r in sorted((r for s in suites for r in s.records), key=lambda r: r.id)]
    write_csv(path, ("id", "lhs", "rhs", "margin", "error_bound", "verdict"), rows)


# ---------------------------------------------------------------------------
# SVG

def _svg(size: int, body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">\n<rect width="{size}" height="{size}" fill="white" stroke="black"/>\n')
    return head + "".join(body) + "</svg>\n"


def packing_svg(centers, radii, size: int = 600) -> str:
    """Balls drawn to scale with their periodic copies and 1-based labels."""
    body = []
    for i, (c, r) in enumerate(zip(centers, radii), 1):
        for du in (-1, 0, 1):
            for dv in (-1, 0, 1):
                u, v = c[0] + du, c[1] + dv
                if -r <= u <= 1 + r and -r <= v <= 1 + r:
                    body.append(f'<circle cx="{u * size:.3f}" cy="{(1 - v) * size:.3f}" r="{r * size:.3f}" '
                                f'fill="none" stroke="steelblue"/>\n')
        if r * size >= 4:
            body.append(f'<text x="{c[0] * size:.3f}" y="{(1 - c[1]) * size:.3f}" font-size="{max(6, min(14, r * size)):.1f}" '
                        f'text-anchor="middle" dominant-baseline="middle">{i}</text>\n')
    return _svg(size, body)


def raster_overlay_svg(E: np.ndarray, U: np.ndarray, size: int = 512, cells: int = 256) -> str:
    """Set ``E`` (red) over ``U`` (blue) at a reduced resolution; a cell is on if any fine cell is."""
    def coarse(M):
        G = M.shape[0]
        f = max(1, G // cells)
        n = G // f
        return M[: n * f, : n * f].reshape(n, f, n, f).any(axis=(1, 3))

    body = []
    for M, color in ((coarse(U), "#4a7fb5"), (coarse(E), "#c0392b")):
        n = M.shape[0]
        px = size / n
        for i in range(n):
            # horizontal runs along v for fixed u keep the file small
            row = np.flatnonzero(np.diff(np.concatenate([[0], M[i].astype(int), [0]])))
            for a, b in zip(row[::2], row[1::2]):
                body.append(f'<rect x="{i * px:.2f}" y="{size - b * px:.2f}" width="{px:.2f}" '
                            f'height="{(b - a) * px:.2f}" fill="{color}" fill-opacity="0.5"/>\n')
    return _svg(size, body)


def config_from_dict(d: dict) -> RunConfig:
    tol = d.get("tolerances", {})
    return RunConfig(grid=d["grid"], balls=d["balls"], seed=d["seed"], **tol)


__all__ = ["ANCHORS", "CheckRecord", "ConfigError", "RunConfig", "SCHEMA_VERSION", "SuiteResult",
           "config_from_dict", "output_dir", "packing_svg", "raster_overlay_svg", "report_dict",
           "write_report", "write_csv"]
