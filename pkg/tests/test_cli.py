import json
import os

import pytest

from pcasim.cli import main
from pcasim.scenarios import preset, read_config, write_config


class TestListAndShow:
    def test_list_presets_prints_catalog(self, capsys):
        assert main(["list-presets"]) == 0
        out = capsys.readouterr().out.strip().splitlines()
        assert len(out) == 40
        assert "mild/reference/none" in out
        assert "aggressive/low-uptake/combined" in out

    def test_show_config_round_trips(self, capsys):
        assert main(["show-config", "--preset", "mild/reference/cytotoxic"]) == 0
        text = capsys.readouterr().out
        assert read_config(text, is_text=True) == preset("mild/reference/cytotoxic")

    def test_show_config_to_file(self, tmp_path):
        out = tmp_path / "scenario.cfg"
        assert main(["show-config", "--preset", "mild/reference/none",
                     "--out", str(out)]) == 0
        assert read_config(out) == preset("mild/reference/none")


class TestValidate:
    def test_valid_preset(self, capsys):
        assert main(["validate", "--preset", "aggressive/reference/antiangiogenic"]) == 0
        out = capsys.readouterr().out
        assert "supply bound" in out and "pass" in out

    def test_unknown_preset_is_usage_error(self, capsys):
        assert main(["validate", "--preset", "mild/reference/nothing"]) == 2

    def test_invalid_schedule_from_config(self, tmp_path, capsys):
        from dataclasses import replace
        from pcasim.model import TherapySchedule
        scen = preset("mild/reference/antiangiogenic")
        bad = replace(scen, anti=TherapySchedule.uniform(60.0, 10, 21.0, 15.0,
                                                         0.2, 30.0))
        path = tmp_path / "bad.cfg"
        write_config(bad, path)
        assert main(["validate", "--config", str(path)]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestRun:
    def test_run_writes_outputs(self, tmp_path):
        out = tmp_path / "run"
        rc = main(["run", "--preset", "mild/reference/none", "--nel", "16",
                   "--horizon", "1", "--cadence", "1", "--snapshot-cadence", "1",
                   "--out", str(out), "--quiet"])
        assert rc == 0
        files = sorted(os.listdir(out))
        assert "timeseries.csv" in files
        assert "metadata.json" in files
        assert "scenario.cfg" in files
        assert "fields_t0000.vtk" in files and "fields_t0001.vtk" in files
        lines = (out / "timeseries.csv").read_text().splitlines()
        assert len(lines) == 3   # header + t=0 + t=1

    def test_metadata_records_conventions(self, tmp_path):
        out = tmp_path / "run"
        main(["run", "--preset", "mild/reference/none", "--nel", "16",
              "--horizon", "0", "--out", str(out), "--quiet"])
        meta = json.loads((out / "metadata.json").read_text())
        assert "preconditioned residual" in meta["gmres"]
        assert meta["sigma_l_sigma_r_provenance"] == "calibrated"

    def test_unknown_preset_rc2(self, capsys):
        assert main(["run", "--preset", "bogus/name/none", "--out", "/tmp/x"]) == 2

    def test_malformed_config_rc2(self, tmp_path, capsys):
        cfg = tmp_path / "broken.cfg"
        cfg.write_text("[scenario\nname = oops\n")
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "configuration error" in capsys.readouterr().err

    def test_solver_failure_rc1(self, tmp_path, capsys):
        # an unreachable tolerance forces a Newton divergence on step one
        scen = preset("mild/reference/none", n_el=8, horizon=1.0,
                      newton_max_iter=1, newton_tol=1e-300)
        path = tmp_path / "diverge.cfg"
        write_config(scen, path)
        rc = main(["run", "--config", str(path), "--out", str(tmp_path / "o"),
                   "--quiet"])
        assert rc == 1
        assert "solver failure" in capsys.readouterr().err

    def test_usage_error_rc2(self):
        assert main(["run", "--preset", "mild/reference/none"]) == 2   # no --out


class TestVerifySubcommand:
    def test_jacobian_suite(self, tmp_path, capsys):
        rc = main(["verify", "--suite", "jacobian", "--out", str(tmp_path)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "jacobian_fd_4x4" in out and "pass" in out
        report = (tmp_path / "verification.csv").read_text().splitlines()
        assert report[0] == "check,value,bound,passed"
        assert len(report) >= 3
