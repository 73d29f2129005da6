import json

import numpy as np
from dataclasses import replace

from bemsim.cli import main
from bemsim.config import (config_from_dict, config_to_dict, default_config,
                           fingerprint, load_config, save_config)
from bemsim.datagen import load_csv


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = default_config()
        path = tmp_path / "cfg.json"
        save_config(cfg, path)
        back = load_config(path)
        assert fingerprint(back) == fingerprint(cfg)
        assert np.array_equal(back.building.cth, cfg.building.cth)
        assert back.control == cfg.control

    def test_dict_round_trip_preserves_overrides(self):
        cfg = replace(default_config(), seed=7, year_steps=100)
        back = config_from_dict(config_to_dict(cfg))
        assert back.seed == 7 and back.year_steps == 100

    def test_partial_file_fills_defaults(self, tmp_path):
        path = tmp_path / "partial.json"
        path.write_text(json.dumps({"seed": 3}))
        cfg = load_config(path)
        assert cfg.seed == 3
        assert cfg.year_steps == default_config().year_steps

    def test_ocp_config_reflects_knobs(self):
        cfg = default_config()
        ocp = cfg.ocp_config()
        assert ocp.np_steps == cfg.control.np_steps
        assert ocp.c_buy == cfg.control.c_buy
        assert abs(ocp.wthb.sum() - 1.0) < 1e-12


class TestCli:
    def test_gen_data_then_metrics_flow(self, tmp_path, capsys):
        data = tmp_path / "data.csv"
        cfg_path = tmp_path / "cfg.json"
        save_config(replace(default_config(), year_steps=96), cfg_path)
        assert main(["gen-data", "--config", str(cfg_path),
                     "--out", str(data)]) == 0
        frame = load_csv(data)
        assert frame.n == 96 + 48

        out = tmp_path / "out"
        assert main(["run", "--scenario", "S0", "--config", str(cfg_path),
                     "--out", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "S0:" in captured and "wmare=" in captured
        assert (out / "steps_S0.csv").exists()
        assert (out / "summary.csv").exists()

        assert main(["metrics", "--log", str(out / "steps_S0.csv"),
                     "--config", str(cfg_path)]) == 0
        captured = capsys.readouterr().out
        assert "wmare_K:" in captured

    def test_run_with_external_data(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        save_config(replace(default_config(), year_steps=96), cfg_path)
        data = tmp_path / "data.csv"
        assert main(["gen-data", "--config", str(cfg_path), "--out",
                     str(data)]) == 0
        out = tmp_path / "out"
        assert main(["run", "--scenario", "S0", "--config", str(cfg_path),
                     "--data", str(data), "--out", str(out)]) == 0

    def test_prior_scenarios_with_external_data_fail(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        save_config(replace(default_config(), year_steps=96), cfg_path)
        data = tmp_path / "data.csv"
        main(["gen-data", "--config", str(cfg_path), "--out", str(data)])
        code = main(["run", "--scenario", "S2", "--config", str(cfg_path),
                     "--data", str(data), "--out", str(tmp_path / "o")])
        assert code != 0
        assert "prior" in capsys.readouterr().err

    def test_short_external_data_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "cfg.json"
        save_config(replace(default_config(), year_steps=960), cfg_path)
        data = tmp_path / "short.csv"
        main(["gen-data", "--config", str(cfg_path), "--year-steps", "48",
              "--out", str(data)])
        code = main(["run", "--scenario", "S0", "--config", str(cfg_path),
                     "--data", str(data), "--out", str(tmp_path / "o")])
        assert code != 0

    def test_missing_file_reports_error(self, tmp_path, capsys):
        code = main(["metrics", "--log", str(tmp_path / "nope.csv")])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_init_config(self, tmp_path):
        path = tmp_path / "default.json"
        assert main(["init-config", "--out", str(path)]) == 0
        assert fingerprint(load_config(path)) == fingerprint(default_config())
