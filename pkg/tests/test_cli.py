import json

import pytest

from kitchenplan.cli import build_parser, main


def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--help"])
    out = capsys.readouterr().out
    for name in ("pretrain", "run", "evaluate", "sweep-random", "record-fixtures", "plot"):
        assert name in out


def test_bad_override_exits_2(capsys):
    assert main(["run", "horizon"]) == 2
    assert main(["run", "colour=blue"]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_run_prints_report(tmp_path, capsys):
    assert main(["run", "horizon=50", "seeds=2", f"out_dir={tmp_path}"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["seed"] == 2 and rep["reported_steps"] == 50 and len(rep["digest"]) == 64
    assert (tmp_path / "episode-2.jsonl").exists()


def test_config_file_and_evaluate(tmp_path, capsys):
    cfg = tmp_path / "eval.cfg"
    cfg.write_text(f"horizon=50\nseeds=0-1\nout_dir={tmp_path / 'out'}\n")
    assert main(["evaluate", "--config", str(cfg), "write_logs=false"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n"] == 2
    assert (tmp_path / "out" / "metrics.csv").exists()
    assert not (tmp_path / "out" / "episode-0.jsonl").exists()


def test_sweep_and_plot(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep-random", "--fractions", "0,1", "horizon=50", "seeds=0", "reflection=false",
                 f"out_dir={out}"]) == 0
    assert "f=1" in capsys.readouterr().out
    assert main(["plot", str(out / "curve.csv")]) == 0
    assert (out / "curve.png").stat().st_size > 0
    assert main(["plot", str(out / "fraction-0" / "metrics.csv"), "--out", str(tmp_path / "m.png")]) == 0
    assert (tmp_path / "m.png").exists()


def test_record_fixtures_then_replay(tmp_path, capsys):
    store = tmp_path / "store.jsonl"
    assert main(["record-fixtures", "--store", str(store), "--scenario", "0:2", "horizon=50"]) == 0
    assert "records" in capsys.readouterr().out
    lines = [json.loads(x) for x in store.read_text().splitlines()]
    assert lines and all(set(x) == {"digest", "prompt", "response"} for x in lines)


def test_missing_config_file_exits_2(tmp_path):
    assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2
