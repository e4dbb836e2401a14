import argparse
import json
import pytest
from gammalab import cli
from gammalab.cli import build_parser, exit_code, load_config, main, run
from gammalab.core.constants import ExitCode, KernelVariant, OutputFormat, Subcommand
from gammalab.core.exceptions import ConfigError
from gammalab.report import ReportBuilder, report_payload


def _write(path, text):
    path.write_text(text, encoding="UTF-8")
    return path


def _report(tmp_path):
    return json.loads((tmp_path / "report.json").read_text(encoding="UTF-8"))


class TestLoadConfig:
    def test_subcommand_defaults(self):
        config = load_config("gamma-sweep")
        assert config.subcommand == Subcommand.GAMMA_SWEEP
        assert config.domain.n == 96
        assert config.schedule == [0.2, 0.1, 0.05, 0.025]
        assert config.kernel.variant == KernelVariant.BALL
        assert config.format == OutputFormat.JSON

    def test_identity_check_sample_counts(self):
        config = load_config("identity-check")
        assert (config.trials, config.pairs) == (200, 1000)
        args = build_parser().parse_args(["identity-check", "--trials", "5", "--pairs", "7"])
        assert load_config("identity-check", overrides=cli._flag_overrides(args)).pairs == 7

    def test_precedence(self, tmp_path):
        path = _write(tmp_path / "run.toml", "p = 1.5\nformat = 'csv'\n[domain]\nn = 50\n")
        config = load_config("gamma-sweep", path, {"p": 3.0})
        assert config.p == 3.0
        assert config.domain.n == 50
        assert config.domain.dim == 2
        assert config.format == OutputFormat.CSV

    @pytest.mark.parametrize(
        "overrides, field",
        [
            ({"p": 0.5}, "p"),
            ({"p": float("inf")}, "p"),
            ({"domain": {"n": 0}}, "domain.n"),
            ({"samples": 10}, "samples"),
            ({"density": 1.5}, "density"),
            ({"bogus": 1}, "bogus"),
        ],
    )
    def test_validation_errors_name_the_field(self, overrides, field):
        with pytest.raises(ConfigError) as e:
            load_config("covering-check", overrides=overrides)
        assert e.value.field_path == field

    def test_unreadable_config(self, tmp_path):
        with pytest.raises(ConfigError) as e:
            load_config("phi-defect", tmp_path / "missing.toml")
        assert e.value.field_path == "--config"

    def test_malformed_config(self, tmp_path):
        path = _write(tmp_path / "bad.toml", "p = = 2\n")
        with pytest.raises(ConfigError) as e:
            load_config("phi-defect", path)
        assert e.value.field_path == "--config"

    @pytest.mark.parametrize(
        "subcommand, overrides, field",
        [
            ("gamma-sweep", {"kernel": {"variant": "dense"}}, "kernel.variant"),
            ("gamma-sweep", {"offset": [0.1]}, "offset"),
            ("gamma-sweep", {"schedule": []}, "schedule"),
            ("strip-example", {"domain": {"lengths": [2.0, 1.0]}}, "domain"),
            ("capacity", {"schedule": []}, "schedule"),
            ("covering-check", {"beta_range": [0.5, 0.1]}, "beta_range"),
            ("covering-check", {"etas": [0.6]}, "etas"),
            ("mass-bound", {"eta": 0.5}, "eta"),
        ],
    )
    def test_subcommand_checks(self, subcommand, overrides, field):
        with pytest.raises(ConfigError) as e:
            load_config(subcommand, overrides=overrides)
        assert e.value.field_path == field


class TestParser:
    def test_float_lists(self):
        args = build_parser().parse_args(["gamma-sweep", "--schedule", "0.3,0.2", "--n", "24", "--p", "3"])
        assert args.schedule == [0.3, 0.2]
        assert cli._flag_overrides(args) == {"schedule": [0.3, 0.2], "domain": {"n": 24}, "p": 3.0}

    def test_rejects_bad_list(self):
        with pytest.raises(argparse.ArgumentTypeError):
            cli._float_list("0.3,abc")

    def test_unknown_subcommand_exits(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["sweep"])


class TestExitCode:
    def test_precedence(self):
        builder = ReportBuilder("phi-defect", {}, 0)
        assert exit_code(builder.build()) == ExitCode.PASS
        builder.check_at_most("fails", 1.0, 0.0)
        assert exit_code(builder.build()) == ExitCode.ASSERTION_FAILURE
        builder.record_solve(False)
        assert exit_code(builder.build()) == ExitCode.NON_CONVERGENCE


class TestRun:
    def test_deterministic_apart_from_wall_clock(self, tmp_path):
        config = load_config("phi-defect", overrides={"p": 3.0, "scan_step": 0.1, "out": str(tmp_path)})
        first, second = report_payload(run("phi-defect", config)[0]), report_payload(run("phi-defect", config)[0])
        first.pop("wall_clock_seconds")
        second.pop("wall_clock_seconds")
        assert first == second


class TestMain:
    @pytest.mark.parametrize("p, verdict", [("2", "REPRESENTABLE-CONSISTENT"), ("3", "NOT-REPRESENTABLE")])
    def test_phi_defect(self, tmp_path, p, verdict):
        assert main(["phi-defect", "--p", p, "--scan-step", "0.1", "--out", str(tmp_path)]) == 0
        payload = _report(tmp_path)
        assert payload["subcommand"] == "phi-defect"
        assert payload["passed"] is True
        assert payload["tables"][0]["rows"][0][2] == verdict
        assert (tmp_path / "phi.curve.csv").exists()

    def test_invalid_exponent(self, tmp_path, capsys):
        assert main(["phi-defect", "--p", "0.5", "--out", str(tmp_path)]) == 4
        assert "(field: p)" in capsys.readouterr().err
        assert not (tmp_path / "report.json").exists()

    def test_refused_experiment(self, tmp_path):
        assert main(["capacity", "--p", "3", "--n", "32", "--schedule", "0.3", "--out", str(tmp_path)]) == 4

    def test_identity_check_csv(self, tmp_path):
        code = main(["identity-check", "--trials", "3", "--pairs", "3", "--format", "csv", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "assertions.csv").exists()
        assert b"\r" not in (tmp_path / "identity_check.csv").read_bytes()

    def test_covering_check(self, tmp_path):
        assert main(["covering-check", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "gamma_z_0.3.curve.csv").exists()
        assert (tmp_path / "gamma_z_0.7.curve.csv").exists()

    def test_mass_bound(self, tmp_path):
        assert main(["mass-bound", "--measures", "2", "--n", "40", "--out", str(tmp_path)]) == 0
        assert len(_report(tmp_path)["tables"][0]["rows"]) == 2

    def test_failed_assertion(self, tmp_path, capsys):
        config = _write(tmp_path / "tight.toml", "[tolerances]\nfinal_gap = 1e-9\n")
        out = tmp_path / "out"
        code = main(
            ["gamma-sweep", "--config", str(config), "--n", "24", "--schedule", "0.3,0.2", "--out", str(out)]
        )
        assert code == 2
        assert "Assertion failed | final_gap" in capsys.readouterr().err
        assert _report(out)["passed"] is False

    def test_non_convergence(self, tmp_path, env_settings):
        env_settings(max_iterations=2)
        code = main(["gamma-sweep", "--p", "1.5", "--n", "24", "--schedule", "0.3", "--out", str(tmp_path)])
        assert code == 3
        assert (tmp_path / "report.json").exists()

    def test_unwritable_output(self, tmp_path):
        blocker = _write(tmp_path / "file", "")
        assert main(["phi-defect", "--scan-step", "0.1", "--out", str(blocker / "out")]) == 1

    @pytest.mark.slow
    def test_strip_example(self, tmp_path):
        assert main(["strip-example", "--out", str(tmp_path)]) == 0

    @pytest.mark.slow
    def test_identity_check_defaults(self, tmp_path):
        assert main(["identity-check", "--out", str(tmp_path)]) == 0
        assert _report(tmp_path)["passed"] is True

    @pytest.mark.slow
    def test_capacity(self, tmp_path):
        assert main(["capacity", "--schedule", "0.08,0.04", "--out", str(tmp_path)]) == 0
