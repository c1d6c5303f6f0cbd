"""Integration tests for the command-line interface."""

import json
import logging

import numpy as np
import pandas as pd
import pytest
from rich.logging import RichHandler
from typer.testing import CliRunner

from stablenet.bounds import classify_by_bounds, compute_bounds
from stablenet.cli import RunConfig, _configure_logging, app, logging_dict
from stablenet.constants import EXIT_CODES, LOGGING_CONFIG
from stablenet.netio import Dataset, load_domain, load_network, save_dataset, save_domain, save_network
from stablenet.optcore import SolverError

from networks import coupled_net, unit_box, unstable_net

runner = CliRunner()


def write_instance(directory, net, domain, name="model", rows=None):
    net_path = directory / f"{name}.net.json"
    domain_path = directory / f"{name}.domain.json"
    save_network(net, net_path)
    save_domain(domain, domain_path)
    if rows is not None:
        save_dataset(Dataset(rows=np.array(rows, dtype=float)), directory / f"{name}.csv")
    return net_path, domain_path


@pytest.mark.integration
class TestAnalyze:
    """Test the analyze command."""

    def test_coupled_report(self, tmp_path):
        """The layer-2 neuron is reported stably inactive."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1))
        report_path = tmp_path / "report.json"
        result = runner.invoke(app, ["analyze", str(net_path), str(domain_path), "-o", str(report_path)])
        assert result.exit_code == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["certified"] is True
        assert report["stable_inactive"] == [[], [0]]

    def test_all_unstable(self, tmp_path):
        """No stable neurons, still certified."""
        net_path, domain_path = write_instance(tmp_path, unstable_net(), unit_box(1))
        report_path = tmp_path / "report.json"
        result = runner.invoke(app, ["analyze", str(net_path), str(domain_path), "-o", str(report_path)])
        assert result.exit_code == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["stable_inactive"] == [[]]
        assert report["stable_active"] == [[]]

    def test_preprocess_only_needs_dataset(self, tmp_path):
        """Missing dataset with preprocess-only is a usage error."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1))
        result = runner.invoke(app, ["analyze", str(net_path), str(domain_path), "--mode", "preprocess-only"])
        assert result.exit_code == 2

    def test_preprocess_only_is_uncertified(self, tmp_path):
        """Dataset-only analysis exits with the uncertified code."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1), rows=[[0.0], [1.0]])
        result = runner.invoke(app, [
            "analyze", str(net_path), str(domain_path),
            "--mode", "preprocess-only", "--dataset", str(tmp_path / "model.csv"),
        ])
        assert result.exit_code == 3

    def test_holdout_error(self, tmp_path):
        """The held-out contradiction rate lands in the report."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1), rows=[[0.0]])
        save_dataset(Dataset(rows=np.array([[1.0]])), tmp_path / "holdout.csv")
        report_path = tmp_path / "report.json"
        result = runner.invoke(app, [
            "analyze", str(net_path), str(domain_path), "-d", str(tmp_path / "model.csv"),
            "--holdout", str(tmp_path / "holdout.csv"), "-o", str(report_path),
        ])
        assert result.exit_code == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["preprocessing_error"] == pytest.approx(2 / 3)

    def test_missing_file(self, tmp_path):
        """I/O errors exit with 2."""
        result = runner.invoke(app, ["analyze", str(tmp_path / "nope.json"), str(tmp_path / "nope2.json")])
        assert result.exit_code == 2

    def test_bad_mode(self, tmp_path):
        """Unknown modes are rejected."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1))
        result = runner.invoke(app, ["analyze", str(net_path), str(domain_path), "--mode", "fast"])
        assert result.exit_code == 2


@pytest.mark.integration
class TestCompress:
    """Test the compress command."""

    def test_coupled_collapses(self, tmp_path):
        """The coupled net compresses to a constant with zero residual."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1))
        out = tmp_path / "small.net.json"
        report_path = tmp_path / "report.json"
        result = runner.invoke(app, [
            "compress", str(net_path), str(domain_path), "-o", str(out),
            "--report", str(report_path), "--samples", "500",
        ])
        assert result.exit_code == 0
        compressed = load_network(out)
        assert compressed.depth == 1
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["compression"]["equivalence_residual"] == 0.0
        assert report["compression"]["actions"] == ["none", "collapsed"]

    def test_no_stable_copies_network(self, tmp_path):
        """Without stable neurons the output is byte-identical."""
        net_path, domain_path = write_instance(tmp_path, unstable_net(), unit_box(1))
        out = tmp_path / "copy.net.json"
        report_path = tmp_path / "report.json"
        result = runner.invoke(app, [
            "compress", str(net_path), str(domain_path), "-o", str(out),
            "--report", str(report_path), "--samples", "200",
        ])
        assert result.exit_code == 0
        assert out.read_bytes() == net_path.read_bytes()
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["compression"]["actions"] == ["none"]

    def test_preprocess_only_refused(self, tmp_path):
        """Uncertified compression needs --uncertified-ok and then succeeds on a zero residual."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1), rows=[[0.0], [1.0]])
        args = [
            "compress", str(net_path), str(domain_path), "-o", str(tmp_path / "out.json"),
            "--mode", "preprocess-only", "-d", str(tmp_path / "model.csv"), "--samples", "200",
        ]
        assert runner.invoke(app, args).exit_code == 2
        assert runner.invoke(app, args + ["--uncertified-ok"]).exit_code == 0

    def test_removed_csv(self, tmp_path):
        """Removed connections are exported."""
        from networks import net_from

        net = net_from(1, ([[1.0], [-1.0], [1.0]], [-0.5, 0.5, -3.0]), ([[1.0, 1.0, 7.0]], [0.0]))
        net_path, domain_path = write_instance(tmp_path, net, unit_box(1))
        csv_path = tmp_path / "removed.csv"
        result = runner.invoke(app, [
            "compress", str(net_path), str(domain_path), "-o", str(tmp_path / "small.json"),
            "--removed-csv", str(csv_path), "--samples", "200",
        ])
        assert result.exit_code == 0
        assert len(pd.read_csv(csv_path)) == 2


@pytest.mark.integration
class TestOracleCommand:
    """Test the oracle command."""

    def test_agreement(self, tmp_path):
        """ISA and enumeration agree on the coupled net."""
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1))
        out = tmp_path / "oracle.json"
        result = runner.invoke(app, ["oracle", str(net_path), str(domain_path), "-o", str(out)])
        assert result.exit_code == 0
        assert json.loads(out.read_text(encoding="utf-8"))["agree"] is True


@pytest.mark.integration
class TestGenAndBench:
    """Test instance generation and benchmarking."""

    def test_gen_deterministic(self, tmp_path):
        """The same seed writes identical files."""
        for name in ("a", "b"):
            result = runner.invoke(app, ["gen", str(tmp_path / name), "--seed", "7", "--count", "3"])
            assert result.exit_code == 0
        for path in sorted((tmp_path / "a").iterdir()):
            assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
        assert len(list((tmp_path / "a").glob("*.net.json"))) == 3

    def test_gen_negative_shift(self, tmp_path):
        """A strong negative shift produces stably inactive neurons."""
        result = runner.invoke(app, [
            "gen", str(tmp_path), "--seed", "1", "--count", "3", "--widths", "4", "--bias-shift", "-3",
        ])
        assert result.exit_code == 0
        dead = 0
        for net_path in tmp_path.glob("*.net.json"):
            domain = load_domain(str(net_path).replace(".net.json", ".domain.json"))
            dead += sum(map(len, classify_by_bounds(compute_bounds(load_network(net_path), domain)).stable_inactive))
        assert dead >= 1

    def test_gen_positive_shift(self, tmp_path):
        """A strong positive shift produces stably active neurons."""
        runner.invoke(app, ["gen", str(tmp_path), "--seed", "1", "--count", "3", "--widths", "4", "--bias-shift", "3"])
        alive = 0
        for net_path in tmp_path.glob("*.net.json"):
            domain = load_domain(str(net_path).replace(".net.json", ".domain.json"))
            alive += sum(map(len, classify_by_bounds(compute_bounds(load_network(net_path), domain)).stable_active))
        assert alive >= 1

    def test_gen_dataset_rows(self, tmp_path):
        """--dataset-rows writes a CSV per instance."""
        runner.invoke(app, ["gen", str(tmp_path), "--count", "2", "--dataset-rows", "16"])
        frames = [pd.read_csv(p, header=None) for p in sorted(tmp_path.glob("*.csv"))]
        assert [len(f) for f in frames] == [16, 16]

    def test_bench_table(self, tmp_path):
        """One CSV row per instance with the documented columns."""
        instances = tmp_path / "instances"
        runner.invoke(app, ["gen", str(instances), "--seed", "3", "--count", "3", "--widths", "3,3"])
        table = tmp_path / "bench.csv"
        result = runner.invoke(app, ["bench", str(instances), "--workers", "2", "-o", str(table)])
        assert result.exit_code == 0
        frame = pd.read_csv(table)
        assert len(frame) == 3
        assert list(frame.columns) == [
            "instance", "neurons", "stable", "isa_nodes", "isa_wall_s", "isa_nopre_nodes",
            "baseline_nodes", "baseline_calls", "baseline_wall_s", "wall_ratio", "median_wall_ratio",
        ]
        assert (frame["baseline_calls"] == 2 * frame["neurons"]).all()

    def test_bench_empty_directory(self, tmp_path):
        """No instances is a usage error."""
        assert runner.invoke(app, ["bench", str(tmp_path)]).exit_code == 2


class TestRunConfig:
    """Test CLI configuration validation."""

    def test_tol_positive(self):
        """--tol must be positive."""
        with pytest.raises(ValueError, match="--tol must be positive"):
            RunConfig(command="compress", network="n", domain="d", tol=0.0)

    def test_paths_required(self):
        """analyze needs a network and a domain."""
        with pytest.raises(ValueError, match="needs a network and a domain"):
            RunConfig(command="analyze")


@pytest.mark.integration
class TestSolverFailure:
    """Test how numerical solver failures reach the shell."""

    def test_analyze_maps_solver_error(self, tmp_path, monkeypatch):
        """A SolverError becomes the solver exit code with a message, not a traceback."""
        def broken(*args, **kwargs):
            raise SolverError("LP solve failed with status 4")

        monkeypatch.setattr("stablenet.cli.run_isa", broken)
        net_path, domain_path = write_instance(tmp_path, coupled_net(), unit_box(1))
        result = runner.invoke(app, ["analyze", str(net_path), str(domain_path)])
        assert result.exit_code == EXIT_CODES["SOLVER"] == 6
        assert not isinstance(result.exception, SolverError)
        assert "solver failure" in result.output

    def test_bench_maps_solver_error(self, tmp_path, monkeypatch):
        """Worker failures in bench take the same path."""
        def broken(*args, **kwargs):
            raise SolverError("Oracle LP failed numerically")

        monkeypatch.setattr("stablenet.cli.run_baseline", broken)
        write_instance(tmp_path, coupled_net(), unit_box(1), name="net_000")
        assert runner.invoke(app, ["bench", str(tmp_path)]).exit_code == 6


class TestLogging:
    """Test the logging setup built from LOGGING_CONFIG."""

    def test_dict_schema(self):
        """Every key of LOGGING_CONFIG feeds the dictConfig schema."""
        config = logging_dict(verbose=False)
        assert config["version"] == LOGGING_CONFIG["version"]
        assert config["disable_existing_loggers"] is LOGGING_CONFIG["disable_existing_loggers"]
        assert config["formatters"] == LOGGING_CONFIG["formatters"]
        assert config["root"]["level"] == "INFO"
        assert logging_dict(verbose=True)["root"]["level"] == "DEBUG"

    def test_configure_installs_rich_handler(self):
        """The root logger gets one rich handler with the standard format."""
        _configure_logging(verbose=True)
        root = logging.getLogger()
        rich_handlers = [h for h in root.handlers if isinstance(h, RichHandler)]
        assert root.level == logging.DEBUG
        assert len(rich_handlers) == 1
        assert rich_handlers[0].formatter._fmt == LOGGING_CONFIG["formatters"]["standard"]["format"]
        _configure_logging(verbose=False)
        assert logging.getLogger().level == logging.INFO

    def test_existing_loggers_survive(self):
        """Module loggers created before configuration keep working."""
        module_logger = logging.getLogger("stablenet.stability")
        _configure_logging(verbose=False)
        assert module_logger.disabled is False
