"""Tests for configuration parsing and the command-line front end."""

import csv
import io
import json
import os
import subprocess
import sys

import pytest

from sparsekg import cli
from sparsekg.config import ConfigError, ExperimentConfig, from_dict, load, to_toml

MINIMAL = """\
schema = 1

[experiment]
truth = "sparse-linear"
policies = ["kgsplin", "kglin", "explore"]
budget = 5
reps = 1
seed = 7
n_alternatives = 30

[policy]
warmup_rounds = 2
n_samples = 40
"""

OUTPUTS = ("config.toml", "oc.csv", "runs.csv", "final.csv", "summary.json")


def write_config(tmp_path, text=MINIMAL, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_outputs(out_dir):
    return {name: open(os.path.join(out_dir, name), "rb").read() for name in sorted(os.listdir(out_dir))}


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig(truth="test-function", function="matyas", policies=("kgsplin",), noise_fraction=None,
                               noise_sd=2.5, lambda_grid=(0.5, 1.0), prior_var=9.0, out_dir="x")
        path = tmp_path / "rt.toml"
        path.write_text(to_toml(cfg))
        assert load(str(path)) == cfg

    def test_rejects_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            from_dict({"schema": 1, "experiment": {"budgett": 5}})

    def test_rejects_unknown_section(self):
        with pytest.raises(ConfigError):
            from_dict({"schema": 1, "solver": {}})

    def test_requires_schema(self):
        with pytest.raises(ConfigError, match="schema"):
            from_dict({"experiment": {"budget": 5}})
        with pytest.raises(ConfigError, match="schema"):
            from_dict({"schema": 2})

    def test_rejects_unknown_policy(self):
        with pytest.raises(ConfigError):
            from_dict({"schema": 1, "experiment": {"policies": ["ucb"]}})

    def test_noise_sd_replaces_fraction(self):
        cfg = from_dict({"schema": 1, "experiment": {"noise_sd": 3}})
        assert cfg.noise_sd == 3.0 and cfg.noise_fraction is None

    def test_integer_floats(self):
        cfg = from_dict({"schema": 1, "policy": {"lambda_scale": 1}})
        assert isinstance(cfg.lambda_scale, float)


class TestCmdRun:
    def test_minimal_run_writes_five_rounds(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", write_config(tmp_path), "--out", str(out)]) == 0
        assert sorted(os.listdir(out)) == sorted(OUTPUTS)
        rows = list(csv.reader(io.StringIO((out / "oc.csv").read_text())))
        assert len(rows) == 1 + 5
        assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["budget"] == 5 and summary["failures"] == []

    def test_byte_identical_rerun(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        assert read_outputs(tmp_path / "a") == read_outputs(tmp_path / "b")

    def test_effective_config_reproduces(self, tmp_path):
        assert cli.main(["run", "--config", write_config(tmp_path), "--seed", "3", "--out", str(tmp_path / "a")]) == 0
        again = str(tmp_path / "a" / "config.toml")
        assert cli.main(["run", "--config", again, "--out", str(tmp_path / "b")]) == 0
        assert read_outputs(tmp_path / "a") == read_outputs(tmp_path / "b")

    @pytest.mark.parametrize("text", [
        "schema = 1\n[experiment\nbudget = 5\n",
        MINIMAL.replace("budget = 5", "budget = 5\nbugdet = 5"),
        MINIMAL.replace("schema = 1", "schema = 9"),
        MINIMAL.replace('"explore"', '"thompson"'),
    ], ids=["syntax", "unknown-key", "schema", "policy"])
    def test_malformed_config(self, tmp_path, capsys, text):
        out = tmp_path / "out"
        assert cli.main(["run", "--config", write_config(tmp_path, text), "--out", str(out)]) == 2
        assert "error" in capsys.readouterr().err
        assert not out.exists()

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 2

    def test_solver_failure_writes_nothing(self, tmp_path, monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise RuntimeError("synthetic")

        monkeypatch.setattr(cli.harness, "run_replications", boom)
        out = tmp_path / "out"
        assert cli.main(["run", "--config", write_config(tmp_path), "--out", str(out)]) == 1
        assert "synthetic" in capsys.readouterr().err
        assert not out.exists()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "sparsekg", "run", "--config", write_config(tmp_path),
                               "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "o" / "oc.csv").exists()


class TestThreads:
    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        assert cli._threads(None) == 3
        assert cli._threads(2) == 2

    def test_default(self, monkeypatch):
        monkeypatch.delenv(cli.THREADS_ENV, raising=False)
        assert cli._threads(None) == 1

    def test_bad_values(self, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        with pytest.raises(ConfigError):
            cli._threads(None)
        with pytest.raises(ConfigError):
            cli._threads(0)

    def test_threads_do_not_change_output(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, MINIMAL.replace("reps = 1", "reps = 2"))
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["run", "--config", cfg, "--threads", "1", "--out", str(tmp_path / "b")]) == 0
        assert read_outputs(tmp_path / "a") == read_outputs(tmp_path / "b")


class TestFig1:
    def test_defaults(self):
        args = cli.build_parser().parse_args(["fig1"])
        cfg = cli.fig1_config(args)
        assert cfg.budget == 200 and cfg.truth == "sparse-linear"
        assert cfg.policies == ("kgsplin", "kglin", "explore")
        assert cfg.noise_fraction == 0.05

    def test_smoke_and_sweep_rows(self, tmp_path):
        out = tmp_path / "fig1"
        argv = ["fig1", "--reps", "1", "--budget", "6", "--lambda-grid", "0.5,1", "--sweep-reps", "1",
                "--out", str(out)]
        assert cli.main(argv) == 0
        rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
        assert len(rows) == 2 * 2
        assert {(r["lambda_scale"], r["policy"]) for r in rows} == {
            (s, p) for s in ("0.5", "1.0") for p in ("kgsplin", "kglin")}
        header = (out / "oc.csv").read_text().splitlines()[0].split(",")
        assert {"kgsplin_log_mean_oc", "kglin_log_mean_oc", "explore_log_mean_oc"} <= set(header)
        assert len((out / "oc.csv").read_text().splitlines()) == 1 + 6

    def test_matches_equivalent_run_config(self, tmp_path):
        argv = ["fig1", "--reps", "1", "--budget", "6", "--lambda-grid", "0.5,1", "--sweep-reps", "1"]
        assert cli.main(argv + ["--out", str(tmp_path / "a")]) == 0
        cfg = cli.fig1_config(cli.build_parser().parse_args(argv))
        path = write_config(tmp_path, to_toml(cfg), "fig1.toml")
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / "b")]) == 0
        assert read_outputs(tmp_path / "a") == read_outputs(tmp_path / "b")


class TestTable2:
    def test_defaults(self):
        args = cli.build_parser().parse_args(["table2"])
        cfgs = cli.table2_configs(args)
        assert [c.noise_sd for c in cfgs] == [1.0, 10.0, 20.0]
        assert all(c.budget == 50 and c.function == "matyas" for c in cfgs)

    def test_smoke(self, tmp_path):
        out = tmp_path / "t2"
        assert cli.main(["table2", "--function", "matyas", "--noise", "1", "--reps", "2", "--budget", "8",
                         "--out", str(out)]) == 0
        rows = list(csv.DictReader(io.StringIO((out / "table2.csv").read_text())))
        assert [r["policy"] for r in rows] == ["KGSpLin", "KGLin"]
        assert {"E(OC)", "sigma(OC)", "Med"} <= set(rows[0])
        assert (out / "sd1" / "oc.csv").exists()

    def test_unknown_function(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["table2", "--function", "rosenbrock"])


class TestSpam:
    def test_defaults(self):
        cfg = cli.spam_config(cli.build_parser().parse_args(["spam"]))
        assert cfg.truth == "ss-anova" and cfg.budget == 30 and cfg.n_alternatives == 400
        assert cfg.noise_fraction == 0.2 and cfg.lambda_scale == cli.SPAM_LAMBDA_SCALE

    def test_smoke(self, tmp_path):
        out = tmp_path / "spam"
        assert cli.main(["spam", "--reps", "1", "--budget", "3", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["policies"]) == {"kgspam", "kglin"}
