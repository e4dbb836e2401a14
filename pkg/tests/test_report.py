import json
import math
import numpy as np
import pytest
from concurrent.futures import ThreadPoolExecutor
from gammalab.core.constants import OutputFormat, Verdict
from gammalab.core.exceptions import InvalidInputError
from gammalab.report import Report, ReportBuilder, emit, emit_csv, emit_json, library_version, report_payload


def _builder() -> ReportBuilder:
    return ReportBuilder("phi-defect", {"p": 3.0, "out": "out"}, seed=7)


def _sample_report() -> Report:
    builder = _builder()
    builder.check_at_most("small", 0.1, 0.5)
    builder.check_at_least("large", 0.1, 0.5)
    rows = [(3.0, Verdict.NOT_REPRESENTABLE, True, 0.1)]
    builder.add_table("certificate", ("p", "verdict", "converged", "value"), rows)
    builder.add_curve("phi", [0.0, 0.5, 1.0], [0.0, 0.125, 0.0], "s", "phi")
    return builder.build(wall_clock_seconds=1.5)


class TestReportBuilder:
    def test_slack_signs(self):
        builder = _builder()
        passed = builder.check_at_most("a", 1.0, 2.0)
        failed = builder.check_at_least("b", 1.0, 2.0)
        assert passed.passed and passed.slack == 1.0
        assert not failed.passed and failed.slack == -1.0

    def test_first_failure(self):
        report = _sample_report()
        assert not report.passed
        assert report.first_failure.name == "large"

    def test_empty_report_passes(self):
        report = _builder().build()
        assert report.passed
        assert report.first_failure is None
        assert report.converged

    def test_record_solve_is_sticky(self):
        builder = _builder()
        builder.record_solve(True)
        builder.record_solve(False)
        builder.record_solve(True)
        assert not builder.build().converged

    def test_curve_lengths_must_match(self):
        with pytest.raises(InvalidInputError):
            _builder().add_curve("bad", [0.0, 1.0], [0.0])

    def test_concurrent_checks(self):
        builder = _builder()
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(lambda i: builder.check_at_most(f"c{i}", i, 100), range(200)))
        assert len(builder.build().assertions) == 200

    def test_version(self):
        assert isinstance(library_version(), str)
        assert _builder().build().version == library_version()


class TestJson:
    def test_empty_report(self, tmp_path):
        emit_json(_builder().build(), tmp_path)
        payload = json.loads((tmp_path / "report.json").read_text(encoding="UTF-8"))
        assert payload["assertions"] == []
        assert payload["tables"] == []
        assert payload["curves"] == []
        assert payload["passed"] is True

    def test_keys_are_sorted(self, tmp_path):
        emit_json(_sample_report(), tmp_path)
        payload = json.loads((tmp_path / "report.json").read_text(encoding="UTF-8"))
        assert list(payload) == sorted(payload)
        assert payload["config"] == {"out": "out", "p": 3.0}
        assert payload["seed"] == 7
        assert payload["tables"][0]["rows"] == [[3.0, "NOT-REPRESENTABLE", True, 0.1]]

    def test_non_finite_values_become_strings(self, tmp_path):
        builder = _builder()
        builder.check("unbounded", True, math.inf)
        builder.add_table("t", ("x",), [(np.float64(np.nan),)])
        payload = report_payload(builder.build())
        assert payload["assertions"][0]["slack"] == "inf"
        assert payload["tables"][0]["rows"] == [["nan"]]
        emit_json(builder.build(), tmp_path)

    def test_identical_apart_from_wall_clock(self, tmp_path):
        first, second = _sample_report(), _sample_report()
        a, b = report_payload(first), report_payload(second)
        a.pop("wall_clock_seconds")
        b.pop("wall_clock_seconds")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_writes_curves(self, tmp_path):
        paths = emit_json(_sample_report(), tmp_path)
        assert tmp_path / "phi.curve.csv" in paths
        assert (tmp_path / "phi.curve.csv").read_text(encoding="UTF-8").splitlines()[0] == "s,phi"


class TestCsv:
    def test_files(self, tmp_path):
        paths = emit_csv(_sample_report(), tmp_path)
        assert [p.name for p in paths] == ["assertions.csv", "certificate.csv", "phi.curve.csv"]

    def test_cells(self, tmp_path):
        emit_csv(_sample_report(), tmp_path)
        raw = (tmp_path / "certificate.csv").read_bytes()
        assert b"\r" not in raw
        assert raw.decode("UTF-8").splitlines() == [
            "p,verdict,converged,value",
            f"3,NOT-REPRESENTABLE,true,{format(0.1, '.17g')}",
        ]

    def test_assertions(self, tmp_path):
        emit_csv(_sample_report(), tmp_path)
        lines = (tmp_path / "assertions.csv").read_text(encoding="UTF-8").splitlines()
        assert lines[0] == "name,passed,slack,detail"
        assert lines[1].startswith("small,true,0.40000000000000002")
        assert lines[2].startswith("large,false,-0.40000000000000002")


class TestEmit:
    def test_format_selection(self, tmp_path):
        emit(_sample_report(), tmp_path / "csv", "csv")
        emit(_sample_report(), tmp_path / "json", OutputFormat.JSON)
        assert (tmp_path / "csv" / "assertions.csv").exists()
        assert (tmp_path / "json" / "report.json").exists()

    def test_creates_missing_directory(self, tmp_path):
        emit(_sample_report(), tmp_path / "a" / "b")
        assert (tmp_path / "a" / "b" / "report.json").exists()

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("", encoding="UTF-8")
        with pytest.raises(OSError):
            emit(_sample_report(), blocker / "out")

    def test_unwritable_file_is_reported(self, tmp_path, capsys):
        (tmp_path / "report.json").mkdir()
        with pytest.raises(OSError):
            emit_json(_sample_report(), tmp_path)
        assert "Unable to write report" in capsys.readouterr().err
