import json
import math

import numpy as np
import pytest

from isoworkbench.report import (ANCHORS, CheckRecord, ConfigError, RunConfig, SuiteResult,
                                 config_from_dict, output_dir, packing_svg, report_dict, write_report)


def record(id="a", lhs=1.0, rhs=2.0, err=0.0, orientation="le"):
    return CheckRecord(id, "profile", lhs, rhs, err, orientation)


class TestCheckRecord:
    @pytest.mark.parametrize("orientation,lhs,rhs,margin", [("le", 1, 3, 2), ("ge", 1, 3, -2), ("eq", 1, 3, -2),
                                                            ("eq", 2, 2, 0)])
    def test_margin(self, orientation, lhs, rhs, margin):
        assert record(lhs=lhs, rhs=rhs, orientation=orientation).margin == margin

    def test_error_bound_rescues_a_small_deficit(self):
        assert record(lhs=2.0 + 1e-9, rhs=2.0, err=1e-8).verdict == "pass"
        assert record(lhs=2.0 + 1e-7, rhs=2.0, err=1e-8).verdict == "fail"

    def test_bad_anchor(self):
        with pytest.raises(ValueError, match="anchor"):
            CheckRecord("x", "nowhere", 0, 0, 0)

    def test_bad_orientation(self):
        with pytest.raises(ValueError):
            record(orientation="lt")

    def test_json_fields(self):
        d = record(lhs=np.float64(1.0), rhs=math.inf).to_dict()
        assert d["paper_anchor"]["tag"] == ANCHORS["profile"][0]
        assert d["rhs"] == "inf"
        json.dumps(d)

    def test_every_anchor_has_a_quote(self):
        assert all(tag and quote for tag, quote in ANCHORS.values())


class TestRunConfig:
    @pytest.mark.parametrize("kw", [{"grid": 32}, {"grid": 9000}, {"balls": 0}, {"balls": 25},
                                    {"eps_grid": 0.0}, {"volume_tol": math.nan}, {"workers": 0}])
    def test_validation(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw)

    def test_round_trip(self):
        cfg = RunConfig(grid=512, balls=7, seed=3, eps_quad=1e-5)
        assert config_from_dict(cfg.to_dict()) == RunConfig(grid=512, balls=7, seed=3, eps_quad=1e-5)

    def test_output_path_is_not_part_of_the_config(self):
        assert RunConfig(out="a", workers=2).to_dict() == RunConfig(out="b").to_dict()


class TestWriter:
    def suites(self):
        ok = SuiteResult("one", [record("b"), record("a")], tables={"t.csv": (("x",), [(0.5,)])},
                         figures={"f.svg": packing_svg([[0.5, 0.5]], [0.25])})
        bad = SuiteResult("two", [record("c", lhs=3.0)])
        return [ok, bad]

    def test_schema(self):
        d = report_dict(RunConfig(), self.suites())
        assert set(d) == {"schema_version", "config", "suites", "errors", "records", "summary"}
        assert [r["id"] for r in d["records"]] == ["a", "b", "c"]
        assert d["summary"] == {"checks": 3, "failed": 1, "passed": False}

    def test_files_and_determinism(self, tmp_path):
        a = write_report(RunConfig(), self.suites(), tmp_path / "a")
        b = write_report(RunConfig(), self.suites(), tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        for name in ("report.meta.json", "report_margins.csv", "t.csv", "f.svg"):
            assert (tmp_path / "a" / name).exists()
        assert (tmp_path / "a" / "t.csv").read_text() == "x\n0.5\n"

    def test_error_is_reported(self):
        d = report_dict(RunConfig(), [SuiteResult("x", error="ValueError: nope")])
        assert d["errors"] == {"x": "ValueError: nope"} and not d["summary"]["passed"]

    def test_env_overrides_cli(self, monkeypatch, tmp_path):
        monkeypatch.setenv("ISO_WORKBENCH_OUT", str(tmp_path))
        assert output_dir("elsewhere", "default") == tmp_path
        monkeypatch.delenv("ISO_WORKBENCH_OUT")
        assert str(output_dir("elsewhere", "default")) == "elsewhere"
        assert str(output_dir(None, "default")) == "default"
