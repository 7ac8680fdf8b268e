import csv
import json

import pytest

from pacesim.cli import EPISODE_COLUMNS, ConfigError, main, parse_config


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config("run", {"pacer": "min", "env": "adversarial-ros", "T": 10000})
        from pacesim.environments import make_env
        pc = cfg.pacer_config(make_env(cfg.env)).resolve(cfg.T[0])
        assert pc.alpha == pytest.approx(0.01) and pc.eta == pytest.approx(0.01)
        assert pc.lambda_init == 1.0 and pc.mu_init == 1.9

    def test_unknown_pacer(self):
        with pytest.raises(ConfigError, match="dual-optimal, sequential, min"):
            parse_config("run", {"pacer": "joint"})

    @pytest.mark.parametrize("bad", [{"T": 0}, {"rho": -1}, {"seeds": 0}, {"alpha": "fast"},
                                     {"lambda_init": 0}, {"env": "moon"}, {"colour": "red"}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            parse_config("run", bad)

    def test_scale_needs_three(self):
        with pytest.raises(ConfigError, match="3 horizons"):
            parse_config("scale", {"T": [1000]})

    def test_flags_override_file(self):
        cfg = parse_config("run", {"T": 100, "seeds": 4}, seeds=2)
        assert cfg.seeds == 2 and cfg.T == [100]


class TestMain:
    def test_oracle(self, tmp_path, capsys):
        assert main(["oracle", "--env", "adversarial-ros", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        k = {r[0]: float(r[1]) for r in read_csv(tmp_path / "oracle.csv")[1:]}
        assert k["k_ros"] == pytest.approx(2.0, abs=1e-3)
        assert k["k_budget"] == pytest.approx(3.899, abs=1e-2)
        assert k["dual_value"] == pytest.approx(0.5, abs=1e-3)
        assert "k_ros" in out

    def test_run_rows_and_manifest(self, tmp_path):
        rc = main(["run", "--pacer", "min", "--env", "adversarial-ros", "--T", "10000", "--seeds", "5",
                   "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "episodes.csv")
        assert tuple(rows[0]) == EPISODE_COLUMNS
        assert len(rows) == 6
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"episodes.csv", "summary.csv"}
        assert len(manifest["input_hash"]) == 64

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PACESIM_OUT", str(tmp_path / "envout"))
        assert main(["run", "--T", "100"]) == 0
        assert (tmp_path / "envout" / "episodes.csv").exists()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"pacer": "min", "env": "adversarial-ros", "T": 1000,
                                   "out": str(tmp_path / "o")}))
        assert main(["run", "--config", str(cfg)]) == 0
        assert len(read_csv(tmp_path / "o" / "episodes.csv")) == 2

    def test_exit_codes(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"pacer": "joint"}))
        assert main(["run", "--config", str(bad)]) == 2
        assert "unknown pacer kind" in capsys.readouterr().err
        assert main(["run", "--T", "0", "--out", str(tmp_path)]) == 2
        assert main(["scale", "--T", "1000", "--out", str(tmp_path)]) == 2
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
        unknown = tmp_path / "unknown.json"
        unknown.write_text(json.dumps({"T": 10, "horizon": 5}))
        assert main(["run", "--config", str(unknown)]) == 2

    def test_assumption_exit_code(self, tmp_path, monkeypatch):
        from pacesim import oracle

        def boom(*a, **k):
            raise oracle.AssumptionViolation("crosses twice")
        monkeypatch.setattr(oracle, "crossing_points", boom)
        assert main(["oracle", "--out", str(tmp_path)]) == 3

    def test_invariant_exit_code(self, tmp_path, monkeypatch):
        from pacesim import pacing
        # shrink the bound so that an aggressive start trips it
        monkeypatch.setattr(pacing, "ros_violation_bound", lambda T, lam: 1e-12)
        rc = main(["run", "--pacer", "min", "--env", "exponential", "--T", "1000", "--lambda-init", "0.01",
                   "--out", str(tmp_path)])
        assert rc == 4

    def test_no_assert_flag(self, tmp_path, monkeypatch):
        from pacesim import pacing
        monkeypatch.setattr(pacing, "ros_violation_bound", lambda T, lam: 1e-12)
        rc = main(["run", "--pacer", "min", "--env", "exponential", "--T", "1000", "--lambda-init", "0.01",
                   "--no-assert", "--out", str(tmp_path)])
        assert rc == 0

    def test_demo_seq(self, tmp_path):
        assert main(["demo-seq", "--T", "1000", "10000", "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "demo_seq.csv")
        assert [r[4] for r in rows[1:]] == ["ros", "ros"]

    def test_fleet(self, tmp_path):
        assert main(["fleet", "--campaigns", "4", "--seeds", "2", "--out", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "fleet_tables.csv")
        assert len(rows) == 1 + 3 * 12

    def test_scale(self, tmp_path):
        assert main(["scale", "--T", "100", "1000", "10000", "--seeds", "3", "--out", str(tmp_path)]) == 0
        assert len(read_csv(tmp_path / "scaling.csv")) == 4

    @pytest.mark.parametrize("argv", [
        ["run", "--pacer", "min", "dual-optimal", "--env", "exponential", "--T", "2000", "--seeds", "3",
         "--jobs", "2"],
        ["demo-seq", "--T", "1000", "10000"],
        ["fleet", "--campaigns", "3", "--seeds", "2", "--jobs", "2"],
    ])
    def test_byte_identical_reruns(self, tmp_path, argv):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(argv + ["--out", str(a)]) == 0
        assert main(argv + ["--out", str(b)]) == 0
        for f in a.glob("*.csv"):
            assert f.read_bytes() == (b / f.name).read_bytes()
