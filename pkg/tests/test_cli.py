import csv
import logging
import math
import textwrap
from pathlib import Path

import pytest

from oofsk import cli
from oofsk.channel import Correlation
from oofsk.detector import Scenario
from oofsk.errors import ManifestError

MANIFEST = """\
mode: simulate
scenario: coherent
grid:
  snr_db: [0, 5]
  v: [1, 0.5]
  L: [2]
  M: [4]
channel:
  K: 1/8
  rho: 0
mc:
  n_trials: 3000
  seed: 2009
  batch_size: 1024
output: {output}
"""


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestParseManifest:
    def test_full_manifest(self, tmp_path):
        manifest = cli.parse_manifest(MANIFEST.format(output=tmp_path / "out.csv"))
        assert manifest.scenario is Scenario.COHERENT
        assert manifest.rician_k == pytest.approx(0.125)
        assert manifest.snr_db == (0.0, 5.0)
        assert manifest.L == (2,)
        assert manifest.correlation is Correlation.CONSTANT
        assert manifest.n_trials == 3000

    def test_grid_order(self, tmp_path):
        manifest = cli.parse_manifest(MANIFEST.format(output="x.csv"))
        points = [(p.M, p.L, p.v, p.snr_db) for p in manifest.grid_points()]
        assert points == [(4, 2, 1.0, 0.0), (4, 2, 1.0, 5.0), (4, 2, 0.5, 0.0), (4, 2, 0.5, 5.0)]

    @pytest.mark.parametrize("text, value", [("inf", math.inf), ("0.25", 0.25), ("3", 3.0), ("1/8", 0.125)])
    def test_rician_factor_forms(self, text, value):
        manifest = cli.parse_manifest(MANIFEST.replace("K: 1/8", f"K: {text}").format(output="x.csv"))
        assert manifest.rician_k == value

    def test_unknown_key_reports_line(self):
        text = MANIFEST.replace("  rho: 0\n", "  rho: 0\n  phase: random\n").format(output="x.csv")
        with pytest.raises(ManifestError) as excinfo:
            cli.parse_manifest(text)
        assert excinfo.value.line == 11
        assert excinfo.value.field == "channel.phase"
        assert "line 11" in str(excinfo.value)

    def test_out_of_range_value_reports_line(self):
        text = MANIFEST.replace("v: [1, 0.5]", "v: [1, 1.5]").format(output="x.csv")
        with pytest.raises(ManifestError) as excinfo:
            cli.parse_manifest(text)
        assert excinfo.value.line == 5

    def test_empty_grid(self):
        with pytest.raises(ManifestError):
            cli.parse_manifest(MANIFEST.replace("L: [2]", "L: []").format(output="x.csv"))

    def test_missing_scenario(self):
        with pytest.raises(ManifestError) as excinfo:
            cli.parse_manifest(MANIFEST.replace("scenario: coherent\n", "").format(output="x.csv"))
        assert excinfo.value.field == "scenario"

    def test_broken_yaml(self):
        with pytest.raises(ManifestError) as excinfo:
            cli.parse_manifest("grid: [1, 2\nscenario: coherent\n")
        assert excinfo.value.line is not None

    def test_bad_fraction(self):
        with pytest.raises(ManifestError):
            cli.parse_manifest(MANIFEST.replace("K: 1/8", "K: 1/0").format(output="x.csv"))


class TestMain:
    def test_simulate_writes_csv(self, tmp_path):
        out = tmp_path / "sim.csv"
        manifest = _write(tmp_path, MANIFEST.format(output=out))
        assert cli.main(["simulate", "--manifest", str(manifest)]) == cli.EXIT_OK
        with open(out) as f:
            assert f.readline().strip() == ",".join(cli.CSV_COLUMNS)
        rows = _rows(out)
        assert len(rows) == 4
        for row in rows:
            assert row["p_e_analytic"] == ""
            assert row["trials"] == "3000"
            assert row["seed"] == "2009"
            assert 0.0 <= float(row["p_e_mc"]) <= 1.0
            assert row["K"] == "0.125"

    def test_same_seed_byte_identical(self, tmp_path):
        manifest = _write(tmp_path, MANIFEST.format(output=tmp_path / "unused.csv"))
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        assert cli.main(["simulate", "-m", str(manifest), "-o", str(first)]) == 0
        assert cli.main(["simulate", "-m", str(manifest), "-o", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_process_pool_keeps_grid_order(self, tmp_path):
        manifest = _write(tmp_path, MANIFEST.format(output=tmp_path / "unused.csv"))
        serial, pooled = tmp_path / "serial.csv", tmp_path / "pooled.csv"
        assert cli.main(["simulate", "-m", str(manifest), "-o", str(serial)]) == 0
        assert cli.main(["simulate", "-m", str(manifest), "-o", str(pooled), "--workers", "2"]) == 0
        assert pooled.read_bytes() == serial.read_bytes()
        order = [(row["v"], row["snr_db"]) for row in _rows(pooled)]
        assert order == [("1.0", "0.0"), ("1.0", "5.0"), ("0.5", "0.0"), ("0.5", "5.0")]

    def test_seed_override(self, tmp_path):
        manifest = _write(tmp_path, MANIFEST.format(output=tmp_path / "unused.csv"))
        out = tmp_path / "seeded.csv"
        assert cli.main(["simulate", "-m", str(manifest), "-o", str(out), "--seed", "7", "--trials", "500"]) == 0
        rows = _rows(out)
        assert {row["seed"] for row in rows} == {"7"}
        assert {row["trials"] for row in rows} == {"500"}

    def test_analytic_leaves_mc_cells_empty(self, tmp_path):
        out = tmp_path / "analytic.csv"
        text = MANIFEST.replace("snr_db: [0, 5]", "snr_db: [5]").replace("v: [1, 0.5]", "v: [1]")
        manifest = _write(tmp_path, text.format(output=out))
        assert cli.main(["analytic", "--manifest", str(manifest)]) == 0
        (row,) = _rows(out)
        assert 0.0 < float(row["p_e_analytic"]) < 1.0
        assert row["p_e_mc"] == row["mc_ci"] == row["trials"] == row["seed"] == ""

    def test_logs_written_rows(self, tmp_path, caplog):
        out = tmp_path / "logged.csv"
        text = MANIFEST.replace("snr_db: [0, 5]", "snr_db: [5]")
        manifest = _write(tmp_path, text.format(output=out))
        with caplog.at_level(logging.INFO, logger="oofsk.cli"):
            assert cli.main(["analytic", "--manifest", str(manifest)]) == 0
        assert f"Wrote 2 rows to {out}" in caplog.messages

    def test_compare_writes_report(self, tmp_path):
        out = tmp_path / "cmp.csv"
        text = MANIFEST.replace("snr_db: [0, 5]", "snr_db: [5]")
        manifest = _write(tmp_path, text.format(output=out))
        assert cli.main(["compare", "--manifest", str(manifest), "--trials", "20000"]) == 0
        assert len(_rows(out)) == 2
        report = (tmp_path / "cmp_report.txt").read_text()
        assert "outside 3 sigma" in report

    def test_empty_grid_exits_without_output(self, tmp_path):
        out = tmp_path / "empty.csv"
        manifest = _write(tmp_path, MANIFEST.replace("M: [4]", "M: []").format(output=out))
        assert cli.main(["simulate", "--manifest", str(manifest)]) == cli.EXIT_USAGE
        assert not out.exists()

    def test_correlated_analytic_refused(self, tmp_path):
        out = tmp_path / "corr.csv"
        manifest = _write(tmp_path, MANIFEST.replace("rho: 0", "rho: 0.25").format(output=out))
        assert cli.main(["analytic", "--manifest", str(manifest)]) == cli.EXIT_USAGE
        assert not out.exists()

    def test_simulate_needs_trials(self, tmp_path):
        text = MANIFEST.replace("  n_trials: 3000\n", "")
        manifest = _write(tmp_path, text.format(output=tmp_path / "x.csv"))
        assert cli.main(["simulate", "--manifest", str(manifest)]) == cli.EXIT_USAGE

    def test_missing_manifest_file(self, tmp_path):
        assert cli.main(["analytic", "--manifest", str(tmp_path / "nope.yaml")]) == cli.EXIT_USAGE

    def test_bad_arguments_exit_with_usage_code(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["simulate", "--manifest", "x.yaml", "--trials", "0"])
        assert excinfo.value.code == cli.EXIT_USAGE

    def test_convergence_failure_exit_code(self, tmp_path, monkeypatch):
        from oofsk.errors import ConvergenceError

        def fail(manifest, point):
            raise ConvergenceError("did not converge", achieved=1e-3)

        monkeypatch.setattr(cli, "evaluate_point", fail)
        manifest = _write(tmp_path, MANIFEST.format(output=tmp_path / "x.csv"))
        assert cli.main(["simulate", "--manifest", str(manifest)]) == cli.EXIT_NUMERICAL


def test_flag_row():
    row = {"p_e_analytic": 0.1, "p_e_mc": 0.13, "trials": 10_000}
    deviation, sigma, flagged = cli.flag_row(row)
    assert sigma == pytest.approx(0.003)
    assert flagged
    assert not cli.flag_row({"p_e_analytic": 0.1, "p_e_mc": 0.105, "trials": 10_000})[2]


def test_report_path(tmp_path):
    assert cli.report_path(tmp_path / "fig1.csv") == tmp_path / "fig1_report.txt"


MANIFEST_DIR = Path(__file__).resolve().parent.parent / "manifests"


@pytest.mark.parametrize("path", sorted(MANIFEST_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_manifests_are_runnable(path):
    cli.check_runnable(cli.load_manifest(path))
