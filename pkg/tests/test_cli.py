import json

import numpy as np
import pytest

from socbal import cli
from socbal.battery import Mode
from socbal.errors import MalformedInput
from socbal.report import (
    csv_header,
    load_context,
    metrics_from_table,
    read_timeseries_csv,
)
from socbal.scenario_io import preset_text
from socbal.simulation import MetricsContext

PINNED_HEADER_6 = (
    "t,s_1,s_2,s_3,s_4,s_5,s_6,p_1,p_2,p_3,p_4,p_5,p_6,"
    "phat_1,phat_2,phat_3,phat_4,phat_5,phat_6,xhat_1,xhat_2,xhat_3,xhat_4,xhat_5,xhat_6,"
    "pstar,psum,V1,V2"
)

SMALL = """\
name: {name}
mode: {mode}
units:
  - {{capacity_ah: 0.22, voltage: 20.0, soc: 0.9}}
  - {{capacity_ah: 0.22, voltage: 20.0, soc: 0.8}}
  - {{capacity_ah: 0.22, voltage: 20.0, soc: 0.7}}
topology: {{edges: [[1, 2], [2, 3], [1, 3]], access_flags: [0, 1, 0]}}
observers: {{tb: 0.2, psi: 4.0, r: 50.0, alpha: {alpha}, beta: 3000.0}}
profile: {{kind: constant, value: 300.0}}
state_bounds: {{a1: 100.0, a2: 15000.0}}
integration: {{dt: 1e-4, horizon: 0.3, output_stride: 10}}
acceptance: {{eps_power: 3.0}}
"""


def write_small(path, name="small", mode="discharging", alpha=100.0):
    path.write_text(SMALL.format(name=name, mode=mode, alpha=alpha))
    return path


def metric_close(a, b, rel=1e-12):
    if a is None or b is None or isinstance(a, bool):
        return a == b
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


class TestSimulateOutputs:
    def test_files_and_rows(self, example1_cli_dirs):
        out = example1_cli_dirs[0]
        for name in ("timeseries.csv", "summary.json", "validation.json"):
            assert (out / name).exists()
        n, data = read_timeseries_csv(out / "timeseries.csv")
        # horizon / (dt * stride) + 1 = 20 / 1e-3 + 1
        assert (n, data.shape[0]) == (6, 20001)

    def test_header_pinned(self, example1_cli_dirs):
        first = (example1_cli_dirs[0] / "timeseries.csv").read_text().splitlines()[0]
        assert first == PINNED_HEADER_6 == csv_header(6)

    def test_report_reproduces_in_run_metrics(self, example1_cli_dirs, example1_run):
        out = example1_cli_dirs[0]
        _, data = read_timeseries_csv(out / "timeseries.csv")
        recomputed = metrics_from_table(data, load_context(out / "timeseries.csv")).to_dict()
        stored = json.loads((out / "summary.json").read_text())["metrics"]
        in_run = example1_run[1].to_dict()
        for key, value in recomputed.items():
            assert metric_close(value, stored[key]), key
            assert metric_close(value, in_run[key]), key

    def test_report_command(self, example1_cli_dirs, capsys):
        assert cli.main(["report", str(example1_cli_dirs[0] / "timeseries.csv")]) == 0
        out = capsys.readouterr().out
        assert "power tracking error after tb" in out and "FAIL" not in out

    def test_summary_records_settings(self, example1_cli_dirs):
        summary = json.loads((example1_cli_dirs[0] / "summary.json").read_text())
        assert summary["status"] == "ok" and summary["validation_passed"]
        assert summary["settings"]["state_omega_cap"] == pytest.approx(12.5)
        assert summary["context"]["mode"] == "discharging"


class TestReport:
    def test_truncated_csv(self, example1_cli_dirs, tmp_path):
        text = (example1_cli_dirs[0] / "timeseries.csv").read_text()
        (tmp_path / "summary.json").write_text((example1_cli_dirs[0] / "summary.json").read_text())
        bad = tmp_path / "timeseries.csv"
        bad.write_text(text[: len(text) // 2])
        with pytest.raises(MalformedInput):
            read_timeseries_csv(bad)
        assert cli.main(["report", str(bad)]) == cli.EXIT_INPUT

    def test_header_mismatch(self, tmp_path):
        bad = tmp_path / "timeseries.csv"
        bad.write_text("t,a,b,c,d,e,f,g,h\n0,1,2,3,4,5,6,7,8\n")
        with pytest.raises(MalformedInput, match="header"):
            read_timeseries_csv(bad)

    def test_missing_summary(self, tmp_path):
        path = tmp_path / "timeseries.csv"
        path.write_text(csv_header(1) + "\n0.0,0.5,1.0,1.0,1.0,1.0,1.0,0.0,0.0\n")
        assert cli.main(["report", str(path)]) == cli.EXIT_INPUT

    def test_perfect_tracking_fleet(self, tmp_path):
        # two identical units sharing p* = 100 W exactly, estimates exact
        rows = []
        for k in range(11):
            t = 0.1 * k
            soc = 0.5 - t * 50.0 / 1000.0
            x = 1000.0 * soc
            rows.append([t, soc, soc, 50.0, 50.0, 50.0, 50.0, x, x, 100.0, 100.0, 0.0, 0.0])
        path = tmp_path / "timeseries.csv"
        path.write_text(csv_header(2) + "\n" + "".join(",".join(map(repr, r)) + "\n" for r in rows))
        ctx = MetricsContext(2, (1000.0, 1000.0), Mode.DISCHARGING, 0.0, 0.5, 0.1, 100.0, 1.0, 1000.0, 0.0, 0.0)
        m = metrics_from_table(read_timeseries_csv(path)[1], ctx)
        assert m.tracking_err_after_tb == 0.0
        assert m.max_power_obs_err_after_tb == 0.0
        assert m.soc_spread_final == 0.0
        assert m.power_settle_time == 0.0


class TestValidateCommand:
    def test_example1(self, capsys):
        assert cli.main(["validate", "example1_case1_discharge"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 4 and "margin=300" in out

    def test_alpha_600(self, tmp_path, capsys):
        path = tmp_path / "a.yaml"
        path.write_text(preset_text("example1_case1_discharge").replace("alpha: 1000.0", "alpha: 600.0"))
        assert cli.main(["validate", str(path)]) == cli.EXIT_FAILED
        out = capsys.readouterr().out
        assert "[FAIL] alpha_bound" in out and "margin=-100" in out

    def test_disconnected_is_hard_error(self, tmp_path, capsys):
        path = tmp_path / "d.yaml"
        path.write_text(preset_text("example1_case1_discharge").replace("[[1, 2], [2, 3], [3, 4], [4, 5], [5, 6], [1, 6]]", "[[1, 2], [2, 3], [4, 5], [5, 6]]"))
        assert cli.main(["validate", str(path)]) == cli.EXIT_INPUT
        captured = capsys.readouterr()
        assert "DisconnectedGraph" in captured.err and "[PASS]" not in captured.out


class TestSimulateCommand:
    def test_gate_blocks_failing_scenario(self, tmp_path):
        scen = write_small(tmp_path / "s.yaml", alpha=0.0)
        out = tmp_path / "out"
        # constant profile: eps = 0, so alpha = 0 passes; break beta instead
        scen.write_text(scen.read_text().replace("beta: 3000.0", "beta: 1.0"))
        assert cli.main(["simulate", str(scen), "--out", str(out)]) == cli.EXIT_REJECTED
        assert not (out / "timeseries.csv").exists()
        assert json.loads((out / "summary.json").read_text())["status"] == "rejected"

    def test_override_on_case2_preset(self, tmp_path, capsys):
        out = tmp_path / "case2"
        assert cli.main(["simulate", "example1_case2_short", "--out", str(out)]) == cli.EXIT_REJECTED
        assert cli.main(["simulate", "example1_case2_short", "--out", str(out), "--override-validation"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["override"]["used"] and "jumps" in summary["override"]["reason"]
        assert not summary["validation_passed"]
        assert "override" in capsys.readouterr().out

    def test_runtime_abort(self, tmp_path):
        scen = write_small(tmp_path / "s.yaml")
        scen.write_text(scen.read_text().replace("a1: 100.0", "a1: 13000.0"))
        out = tmp_path / "out"
        assert cli.main(["simulate", str(scen), "--out", str(out)]) == cli.EXIT_FAILED
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "aborted" and summary["abort"]["reason"] == "Assumption1Violated"
        assert (out / "timeseries.csv").exists()

    def test_parse_error_exit(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("mode: [\n")
        assert cli.main(["simulate", str(bad), "--out", str(tmp_path / "o")]) == cli.EXIT_INPUT


class TestSweep:
    def test_sweep(self, tmp_path, capsys):
        write_small(tmp_path / "a.yaml", name="a")
        write_small(tmp_path / "b.yaml", name="b", mode="charging")
        assert cli.main(["sweep", str(tmp_path), "--workers", "2"]) == 0
        for stem in ("a", "b"):
            assert (tmp_path / "out" / stem / "timeseries.csv").exists()
        charge = np.loadtxt(tmp_path / "out" / "b" / "timeseries.csv", delimiter=",", skiprows=1)
        assert np.all(charge[:, 4:7] <= 0)

    def test_empty_dir(self, tmp_path):
        assert cli.main(["sweep", str(tmp_path)]) == cli.EXIT_INPUT


def test_presets_listing(capsys):
    assert cli.main(["presets"]) == 0
    assert "balancing_fast" in capsys.readouterr().out
