import json

import pytest

from mloalloc.cli import main


def run_args(out, *extra):
    return ["run", "--preset", "fig9", "--replications", "1", "--budget", "30", "--stas-per-ap", "1", "1", "1",
            "--topology-seed", "4", "--seed", "2", "--out", str(out), *extra]


def test_gen_topology(tmp_path, capsys):
    out = tmp_path / "topo.json"
    assert main(["gen-topology", "--stas-per-ap", "2", "1", "0", "--seed", "3", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data["sta_positions"]) == 3


def test_oracle_from_topology_file(tmp_path, capsys):
    topo = tmp_path / "topo.json"
    main(["gen-topology", "--stas-per-ap", "1", "1", "0", "--seed", "3", "--out", str(topo)])
    capsys.readouterr()
    table = tmp_path / "arms.csv"
    assert main(["oracle", "--topology", str(topo), "--draws", "20", "--csv", str(table)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["arms"] == 49 and 0 < out["normalized"] <= 1
    assert len(table.read_text().splitlines()) == 50


def test_run_is_deterministic(tmp_path, capsys):
    assert main(run_args(tmp_path / "a")) == 0
    assert main(run_args(tmp_path / "b")) == 0
    files = sorted((tmp_path / "a").iterdir())
    assert len(files) == 5
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_unknown_algorithm_exits_nonzero(tmp_path, capsys):
    assert main(run_args(tmp_path, "--algorithms", "bogus")) == 2
    assert "unknown algorithm" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_config_file(tmp_path, capsys):
    cfg = {"name": "fromfile", "algorithms": ["random"], "budget": 10, "replications": 1,
           "scenario": {"stas_per_ap": [1, 1, 0], "seed": 1}, "oracle_draws": 10}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "fromfile_random.csv").exists()


def test_sweep(tmp_path, capsys):
    csv_path = tmp_path / "sweep.csv"
    assert main(["sweep-modes", "--budget", "20", "--n-values", "2", "3", "--topologies", "2",
                 "--csv", str(csv_path)]) == 0
    assert len(csv_path.read_text().splitlines()) == 7
    assert "STR - bonding" in capsys.readouterr().out


def test_bounds(tmp_path, capsys):
    path = tmp_path / "inst.json"
    path.write_text(json.dumps({"layer_means": [[0.65, 0.25], [0.9, 0.4]], "epsilon": 0.1, "delta": 0.01}))
    assert main(["bounds", str(path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["theorem1_sum"] == pytest.approx(2 / 0.45 ** 2 + 2 / 0.55 ** 2)


def test_llm_run(tmp_path, capsys):
    assert main(["llm-run", "--replications", "1", "--budget", "20", "--stas-per-ap", "1", "1", "1",
                 "--L", "2", "--out", str(tmp_path)]) == 0
    summary = json.loads(next(tmp_path.glob("*_summary.json")).read_text())
    assert set(summary["algorithms"]) == {"bai-mcts", "llm-bai-mcts"}


def test_missing_scenario_file(capsys):
    assert main(["gen-topology", "--scenario", "/nonexistent/scenario.json"]) == 2
