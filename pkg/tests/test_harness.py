from __future__ import annotations

import csv
import json
import re

import numpy as np
import pytest

from uclkc import cli
from uclkc.harness import (CSV_COLUMNS, OUTPUT_DIR_ENV, ConfigError, ExperimentConfig, emit_csv, emit_svg,
                           pooled_standard_error, run_experiment, run_single, sweep)

ENV = {"type": "hard_instance", "dim": 3, "delta_mdp": 0.1, "scale": 3.0}


def _cfg(tmp_path, seeds=(0, 1), horizon=300, agents=None, **kw):
    agents = agents or [{"kind": "uclkc"}, {"kind": "noclip"}]
    return ExperimentConfig(ENV, agents, horizon, list(seeds), 0.1, str(tmp_path / "out"), **kw)


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_file_counts(tmp_path):
    res = run_experiment(_cfg(tmp_path, seeds=range(10), horizon=200), workers=1)
    files = sorted(p.name for p in res.output_dir.iterdir())
    assert sum(f.startswith("trace_") for f in files) == 20
    assert "aggregate.csv" in files and "regret.svg" in files
    assert not res.failures


def test_rerun_is_byte_identical(tmp_path):
    cfg = _cfg(tmp_path)
    first = run_experiment(cfg, workers=1)
    blobs = {k: p.read_bytes() for k, p in first.trace_files.items()}
    second = run_experiment(cfg, workers=2)
    for k, p in second.trace_files.items():
        assert p.read_bytes() == blobs[k]


def test_aggregate_mean_matches_traces(tmp_path):
    res = run_experiment(_cfg(tmp_path, seeds=(3, 4, 5)), workers=1)
    rows = _read(res.output_dir / "aggregate.csv")
    assert rows[0] == ["agent", "t", "mean_regret", "stderr", "n_seeds"]
    per_seed = {}
    for (name, seed), path in res.trace_files.items():
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        per_seed.setdefault(name, []).append(data[:, -1])
    for r in rows[1:]:
        name, t = r[0], int(r[1])
        mean = np.mean([c[t - 1] for c in per_seed[name]])
        assert float(r[2]) == pytest.approx(mean, rel=1e-10, abs=1e-10)
        assert int(r[4]) == 3


def test_trace_csv_format(tmp_path):
    cfg = _cfg(tmp_path, horizon=1)
    trace, regret, _ = run_single(cfg.environment, cfg.agents[0], 1, 0.1, 0)
    path = emit_csv(trace, regret, tmp_path / "one.csv")
    rows = _read(path)
    assert rows[0] == list(CSV_COLUMNS) and len(rows) == 2
    trace, regret, _ = run_single(cfg.environment, cfg.agents[0], 50, 0.1, 0)
    rows = _read(emit_csv(trace, regret, tmp_path / "many.csv"))
    assert all(len(r) == len(CSV_COLUMNS) for r in rows)
    assert all(len(re.sub(r"[^0-9]", "", x).lstrip("0")) <= 12 for r in rows[1:] for x in r)


def test_svg_contract(tmp_path):
    aggs = {"a": (np.linspace(0, 5, 20), np.zeros(20), 2), "b": (np.linspace(0, 9, 20), np.zeros(20), 2)}
    text = emit_svg(aggs, tmp_path / "r.svg").read_text()
    assert text.count("<polyline") == 2
    assert ">t</text>" in text and ">regret</text>" in text


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        _cfg(tmp_path, seeds=())
    with pytest.raises(ConfigError):
        ExperimentConfig({"type": "nope"}, [{"kind": "uclkc"}])
    with pytest.raises(ConfigError):
        ExperimentConfig(ENV, [{"kind": "uclkc", "colour": 1}])
    with pytest.raises(ConfigError):
        ExperimentConfig(ENV, [{"kind": "uclkc"}], horizon=0)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json({"environment": ENV, "agents": [{"kind": "uclkc"}], "extra": 1})


def test_failed_run_does_not_abort_siblings(tmp_path):
    agents = [{"kind": "uclkc"}, {"name": "broken", "kind": "uclkc", "n_rounds": 0}]
    res = run_experiment(_cfg(tmp_path, agents=agents, horizon=50), workers=1)
    assert {f["agent"] for f in res.failures} == {"broken"}
    assert len(res.final_regret["uclkc"]) == 2


def test_env_var_overrides_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "elsewhere"
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(target))
    res = run_experiment(_cfg(tmp_path, horizon=20), workers=1)
    assert res.output_dir == target and (target / "aggregate.csv").exists()


def test_pooled_standard_error():
    a, b = np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0])
    sp2 = (2 * 1.0 + 1 * 2.0) / 3
    assert pooled_standard_error(a, b) == pytest.approx(np.sqrt(sp2 * (1 / 3 + 1 / 2)))


def test_sweep_ranks_points(tmp_path):
    cfg = _cfg(tmp_path, horizon=100, agents=[{"kind": "uclkc"}])
    rows = sweep(cfg, "uclkc", {"bonus_scale": [1.0, 0.1]}, workers=1)
    assert len(rows) == 2
    assert rows[0]["mean_final_regret"] <= rows[1]["mean_final_regret"]
    doc = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert doc["ranking"][0]["point"] == rows[0]["point"]
    with pytest.raises(ConfigError):
        sweep(cfg, "uclkc", {"bogus": [1]})


def test_cli_exit_codes(tmp_path, capsys):
    cfg = _cfg(tmp_path, horizon=30)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert cli.main(["run", str(path), "--seeds", "7", "--workers", "1"]) == 0
    assert (tmp_path / "out" / "trace_uclkc_seed7.csv").exists()
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == 2
    mdp_path = tmp_path / "hard.json"
    assert cli.main(["hard-instance", '{"dim": 2, "delta_mdp": 0.1, "gap_override": 0.02}',
                     "--emit", str(mdp_path)]) == 0
    capsys.readouterr()
    assert cli.main(["oracle", str(mdp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["j_star"] == pytest.approx(6 / 11, abs=1e-9)
    assert out["span"] == pytest.approx(50 / 11, abs=1e-8)
    assert cli.main(["hard-instance", '{"dim": 1}', "--emit", str(mdp_path)]) == 2
    assert cli.main(["verify", "contraction"]) == 0
    assert cli.main(["verify", "oracle"]) == 0


def test_cli_verify_failure_exit(monkeypatch):
    from uclkc import verify
    from uclkc.verify import Check

    monkeypatch.setattr(cli, "verify_invariants", lambda scope: [Check("x", False, 1, -1.0)])
    assert cli.main(["verify", "oracle"]) == 1
    assert verify.SCOPES
