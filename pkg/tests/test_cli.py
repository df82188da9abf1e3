import csv
import json
import statistics

import pytest

from digca.cli import ConfigError, ExperimentConfig, main, parse_config, run_experiment, summarize

SMALL = ["--problems", "1", "--add-events", "6", "--change-events", "1", "--remove-events", "1"]


def write_json(tmp_path, data):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_defaults():
    cfg = parse_config([])
    assert cfg.seeds == list(range(10))
    assert cfg.max_out_degrees == [3, 5, 6]
    assert cfg.algorithm == "topdown" and cfg.fault_containment


def test_flag_overrides_file(tmp_path):
    path = write_json(tmp_path, {"seeds": [1, 2], "problems": 2})
    cfg = parse_config(["--config", path, "--seed", "3"])
    assert cfg.seeds == [3] and cfg.problems == 2
    assert parse_config(["--max-out-degree", "5"]).max_out_degrees == [5]


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(["--config", write_json(tmp_path, {"seedz": [1]})])


@pytest.mark.parametrize(
    "args",
    [
        ["--add-events", "3", "--remove-events", "4"],
        ["--max-out-degree", "0"],
        ["--algorithm", "sideways"],
        ["--config", "/nonexistent/cfg.json"],
    ],
)
def test_invalid_config_rejected(args):
    with pytest.raises(ConfigError):
        parse_config(args)


def test_slow_network_needs_longer_wait(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(["--config", write_json(tmp_path, {"max_delay": 0.3})])
    cfg = parse_config(["--config", write_json(tmp_path, {"max_delay": 0.3, "announce_wait": 0.6})])
    assert cfg.max_delay == 0.3


def test_main_exit_codes(tmp_path, capsys):
    assert main(["--add-events", "3", "--remove-events", "4"]) == 1
    assert "config error" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("1.0 explode 3\n")
    assert main(["--events-script", str(bad), "--seed", "0", "--max-out-degree", "3", "--problems", "1", "--out", str(tmp_path / "o")]) == 1
    assert main(SMALL + ["--seed", "0", "--max-out-degree", "3", "--out", str(tmp_path / "ok")]) == 0


def test_outputs_deterministic_and_summary_recomputable(tmp_path):
    args = SMALL + ["--seed", "0", "--seed", "1", "--max-out-degree", "3", "--max-out-degree", "5"]
    run_experiment(parse_config(args + ["--out", str(tmp_path / "a")]))
    run_experiment(parse_config(args + ["--out", str(tmp_path / "b")]))
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) == 6
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    with (tmp_path / "a" / "summary_topdown_digca.csv").open() as fh:
        summary = {int(r["max_out_degree"]): r for r in csv.DictReader(fh)}
    for d in (3, 5):
        totals = []
        for s in (0, 1):
            lines = (tmp_path / "a" / "runs" / f"topdown_digca_d{d}_p0_s{s}.jsonl").read_text().splitlines()
            totals.append(json.loads(lines[-1])["total_messages"])
        assert float(summary[d]["messages_mean"]) == statistics.fmean(totals)
        assert float(summary[d]["messages_std"]) == statistics.stdev(totals)


def test_events_script_file(tmp_path):
    script = tmp_path / "s.txt"
    script.write_text("# tiny\n0 add 0\n5 add 1\n10 add 2\n15 change random\n20 remove 1\n")
    res = run_experiment(parse_config(["--events-script", str(script), "--seed", "0", "--max-out-degree", "3", "--problems", "1", "--out", str(tmp_path / "o")]))
    assert res["violations"] == 0
    lines = (tmp_path / "o" / "runs" / "topdown_digca_d3_p0_s0.jsonl").read_text().splitlines()
    assert len(lines) == 5


def test_summarize_empty():
    assert summarize([]) == []


def test_restart_mode_file_names(tmp_path):
    run_experiment(parse_config(SMALL + ["--seed", "0", "--max-out-degree", "3", "--baseline-restart", "--out", str(tmp_path)]))
    assert (tmp_path / "summary_topdown_restart.csv").exists()
