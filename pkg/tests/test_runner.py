import json
from pathlib import Path

import numpy as np
import pytest

from plastic_rl import cli, config, net, report, runlog, runner


def tiny_config(name="base", reg_kind="none", **over):
    data = {
        "name": name,
        "seeds": [1, 2],
        "out_dir": "runs",
        "env": {"kind": "gridworld"},
        "agent": {"num_steps": 128, "minibatch_size": 32, "num_minibatches": 4,
                  "update_epochs": 2},
        "arch": {"width": 8, "hidden_layers": 2, "activation": "tanh"},
        "reg": {"kind": reg_kind, "strength": 1e-4},
        "schedule": {"total_steps": 512, "change_period": 256,
                     "eval_cadence": 256, "diag_cadence": 512,
                     "eval_episodes": 2},
    }
    for key, val in over.items():
        section, _, leaf = key.partition(".")
        if leaf:
            data[section][leaf] = val
        else:
            data[section] = val
    return config.from_dict(data)


class TestConfig:
    def test_round_trip_through_toml(self):
        cfg = tiny_config(reg_kind="parseval")
        text = config.dumps_toml(config.to_dict(cfg))
        again = config.loads(text)
        assert config.to_dict(again) == config.to_dict(cfg)
        text2 = config.dumps_toml(config.to_dict(again))
        assert text2 == text

    def test_defaults_valid(self):
        cfg = config.from_dict({"name": "x", "seeds": [1]})
        assert cfg.schedule.total_steps == 400_000
        assert cfg.agent.gamma == 0.99

    def test_unknown_field_reports_path(self):
        with pytest.raises(config.ConfigError, match="agent.bogus"):
            config.from_dict({"name": "x", "seeds": [1], "agent": {"bogus": 1}})

    def test_unknown_section_rejected(self):
        with pytest.raises(config.ConfigError, match="mystery"):
            config.from_dict({"name": "x", "seeds": [1], "mystery": {}})

    def test_agent_invariant_reported_with_section(self):
        with pytest.raises(config.ConfigError, match="agent"):
            config.from_dict({"name": "x", "seeds": [1],
                              "agent": {"num_steps": 100, "minibatch_size": 32,
                                        "num_minibatches": 4}})

    def test_groups_must_divide_width(self):
        with pytest.raises(config.ConfigError, match="groups"):
            tiny_config(reg_kind="parseval", **{"reg.groups": 3})

    def test_overrides(self):
        cfg = tiny_config()
        cfg2 = config.apply_overrides(cfg, ["agent.learning_rate=3e-4",
                                            "name=other"])
        assert cfg2.agent.learning_rate == 3e-4
        assert cfg2.name == "other"
        with pytest.raises(config.ConfigError):
            config.apply_overrides(cfg, ["nosuch.key=1"])

    def test_rank_cap_round_trip(self):
        cfg = tiny_config(**{"arch.rank_cap": 4})
        text = config.dumps_toml(config.to_dict(cfg))
        assert config.loads(text).arch.init.rank_cap == 4
        cfg_none = tiny_config()
        assert "rank_cap" not in config.dumps_toml(config.to_dict(cfg_none))


class TestRunlog:
    def test_write_read(self, tmp_path):
        path = tmp_path / "x.runlog"
        with runlog.RunLogWriter(path, {"seed": 1, "name": "t"}) as w:
            w.write({"kind": "eval", "step": 5, "success_rate": 0.5})
            w.write({"kind": "end", "step": 10})
        log = runlog.read_runlog(path)
        assert log.header["seed"] == 1
        assert [r["kind"] for r in log.records] == ["eval", "end"]

    def test_truncated_tail_tolerated(self, tmp_path):
        path = tmp_path / "x.runlog"
        with runlog.RunLogWriter(path, {"seed": 1}) as w:
            w.write({"kind": "eval", "step": 5})
        with open(path, "a", encoding="utf-8") as f:
            f.write('{"kind": "eval", "st')  # crash mid-append
        log = runlog.read_runlog(path)
        assert len(log.records) == 1

    def test_body_excludes_header(self, tmp_path):
        path = tmp_path / "x.runlog"
        with runlog.RunLogWriter(path, {"seed": 1}) as w:
            w.write({"kind": "end", "step": 1})
        body = runlog.body_bytes(path)
        assert b"header" not in body and b'"end"' in body


class TestRunCell:
    def test_writes_log_and_checkpoint(self, tmp_path):
        cfg = tiny_config()
        summary = runner.run_cell(cfg, 7, out_dir=tmp_path)
        assert summary["ok"] and summary["steps"] == 512
        log_path, ckpt_path = runner.cell_paths(tmp_path, "base", 7)
        log = runlog.read_runlog(log_path)
        kinds = [r["kind"] for r in log.records]
        assert kinds.count("eval") == 2
        assert kinds[-1] == "end"
        nets, extras, meta = net.load_checkpoint(ckpt_path)
        assert set(nets) == {"actor", "critic"}
        assert meta["seed"] == 7

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = tiny_config()
        a = tmp_path / "a"
        b = tmp_path / "b"
        runner.run_cell(cfg, 3, out_dir=a)
        runner.run_cell(cfg, 3, out_dir=b)
        log_a, ckpt_a = runner.cell_paths(a, "base", 3)
        log_b, ckpt_b = runner.cell_paths(b, "base", 3)
        assert runlog.body_bytes(log_a) == runlog.body_bytes(log_b)
        assert Path(ckpt_a).read_bytes() == Path(ckpt_b).read_bytes()

    def test_task_sequence_shared_across_arms(self, tmp_path):
        base = tiny_config(name="a")
        pars = tiny_config(name="b", reg_kind="parseval")
        runner.run_cell(base, 5, out_dir=tmp_path)
        runner.run_cell(pars, 5, out_dir=tmp_path)
        log_a = runlog.read_runlog(runner.cell_paths(tmp_path, "a", 5)[0])
        log_b = runlog.read_runlog(runner.cell_paths(tmp_path, "b", 5)[0])
        goals_a = [r["task_payload"] for r in log_a.records
                   if r["kind"] == "task_change"]
        goals_b = [r["task_payload"] for r in log_b.records
                   if r["kind"] == "task_change"]
        assert goals_a == goals_b

    def test_seed_offset_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PLASTIC_RL_SEED_OFFSET", "100")
        assert runner.seed_offset() == 100


class TestRunMany:
    def test_jobs_parity(self, tmp_path):
        cfg = tiny_config()
        out1 = tmp_path / "j1"
        out2 = tmp_path / "j2"
        res1 = runner.run_many(cfg, out_dir=out1, jobs=1)
        res2 = runner.run_many(cfg, out_dir=out2, jobs=2)
        assert all(r["ok"] for r in res1 + res2)
        for seed in cfg.seeds:
            p1, _ = runner.cell_paths(out1, "base", seed)
            p2, _ = runner.cell_paths(out2, "base", seed)
            assert runlog.body_bytes(p1) == runlog.body_bytes(p2)


class TestBench:
    def test_structure_and_direction(self):
        cfg = tiny_config(reg_kind="parseval",
                          **{"arch.width": 64, "schedule.change_period": 2000,
                             "schedule.eval_cadence": 1000,
                             "schedule.diag_cadence": 1000})
        result = runner.bench(cfg, repetitions=3, steps=1500)
        assert set(result["arms"]) == {"parseval", "baseline"}
        for arm in result["arms"].values():
            assert arm["median_per_update_seconds"] > 0
            assert arm["steps_per_second"] > 0
        # the gram-matrix work is real, so the parseval arm cannot be faster
        assert result["overhead_pct"] > 0

    def test_requires_parseval_config(self):
        with pytest.raises(config.ConfigError):
            runner.bench(tiny_config(reg_kind="none"), repetitions=1, steps=200)


@pytest.fixture(scope="module")
def report_logs(tmp_path_factory):
    out = tmp_path_factory.mktemp("logs")
    for name, kind in (("alpha", "none"), ("beta", "parseval")):
        cfg = tiny_config(name=name, reg_kind=kind)
        for seed in (1, 2):
            runner.run_cell(cfg, seed, out_dir=out)
    return out


class TestReports:
    def test_task_scores(self, report_logs):
        logs = report.load_logs(Path(report_logs).glob("*.runlog"))
        scores = report.algorithm_scores(logs)
        assert set(scores) == {"alpha", "beta"}
        # 2 tasks per run, 2 seeds
        assert len(scores["alpha"]) == 4
        assert all(0.0 <= s.mean_success <= 1.0 for s in scores["alpha"])

    def test_profile_report(self, report_logs, tmp_path):
        logs = report.load_logs(Path(report_logs).glob("*.runlog"))
        csv_path, svg_path = report.profile_report(logs, tmp_path)
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "threshold,value,ci_lo,ci_hi,algorithm"
        assert len(lines) == 1 + 101 * 2
        assert svg_path.read_text().startswith("<svg")

    def test_curves_report(self, report_logs, tmp_path):
        logs = report.load_logs(Path(report_logs).glob("*.runlog"))
        csv_path, svg_path = report.curves_report(logs, tmp_path, window=2,
                                                  resamples=50)
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "step,value,ci_lo,ci_hi,algorithm"
        assert len(lines) == 1 + 2 * 2  # 2 eval steps x 2 algorithms
        assert svg_path.exists()

    def test_diagnostics_report(self, report_logs, tmp_path):
        logs = report.load_logs(Path(report_logs).glob("*.runlog"))
        written = report.diagnostics_report(logs, tmp_path)
        csvs = [p for p in written if p.suffix == ".csv"]
        assert sorted(p.name for p in csvs) == ["diag_cosine_sim.csv",
                                                "diag_stable_rank.csv"]
        rows = csvs[1].read_text().strip().split("\n")[1:]
        nets_layers = {(r.split(",")[3], r.split(",")[4]) for r in rows}
        assert nets_layers == {("actor", "1"), ("actor", "2"),
                               ("critic", "1"), ("critic", "2")}


class TestCli:
    def test_layout(self, capsys):
        assert cli.main(["layout"]) == 0
        out = capsys.readouterr().out
        assert "S" in out and "#" in out

    def test_seed_spec(self):
        assert cli.parse_seed_spec("1..5") == [1, 2, 3, 4, 5]
        assert cli.parse_seed_spec("3,9") == [3, 9]
        assert cli.parse_seed_spec("7") == [7]

    def test_invalid_config_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('name = "x"\nseeds = [1]\n[agent]\nbogus = 3\n')
        assert cli.main(["run", "--config", str(bad)]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_run_and_report_end_to_end(self, tmp_path, capsys):
        cfg = tiny_config(name="clitest")
        cfg_path = tmp_path / "cfg.toml"
        cfg_path.write_text(config.dumps_toml(config.to_dict(cfg)))
        out_dir = tmp_path / "runs"
        code = cli.main(["run", "--config", str(cfg_path), "--seeds", "1..2",
                         "--jobs", "2", "--out", str(out_dir),
                         "--set", "agent.learning_rate=0.0003"])
        assert code == 0
        logs = sorted(out_dir.glob("*.runlog"))
        assert len(logs) == 2
        header = json.loads(logs[0].read_text().split("\n")[0])
        assert header["config"]["agent"]["learning_rate"] == 0.0003
        rep_dir = tmp_path / "rep"
        code = cli.main(["report", "--kind", "profile", "--glob",
                         str(out_dir / "*.runlog"), "--out", str(rep_dir)])
        assert code == 0
        assert (rep_dir / "profile.csv").exists()

    def test_report_no_logs_exit_2(self, tmp_path):
        assert cli.main(["report", "--kind", "profile", "--glob",
                         str(tmp_path / "*.runlog"),
                         "--out", str(tmp_path)]) == 2
