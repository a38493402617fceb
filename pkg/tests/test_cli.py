import csv
import json
import os

import jsonschema
import pytest

from frag_explore import cli
from frag_explore.cli import (EXIT_CONFIG, EXIT_FAIL, EXIT_INTERNAL, EXIT_PASS, REPORT_SCHEMA,
                              ConfigError, ExperimentConfig, RunManifest, emit_report,
                              manifest_passed, run_experiment)


def _toml(path, **kw):
    lines = ["[experiment]"]
    for k, v in kw.items():
        lines.append(f"{k} = {json.dumps(v)}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_relations_sweep_kappa3(tmp_path):
    cfg = ExperimentConfig(suite="relations-sweep", kappa=3.0, out_dir=str(tmp_path))
    m = run_experiment(cfg)
    with open(tmp_path / "relations-sweep" / "relations_sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 201
    assert all(abs(float(r["mean_ratio"]) - 0.5) < 1e-9 for r in rows)
    assert manifest_passed(m)
    assert m.verify(str(tmp_path / "relations-sweep"))


def test_same_config_same_digests(tmp_path):
    a = run_experiment(ExperimentConfig(suite="relations-sweep", kappa=3.5), out_root=str(tmp_path / "a"))
    b = run_experiment(ExperimentConfig(suite="relations-sweep", kappa=3.5), out_root=str(tmp_path / "b"))
    assert a.files == b.files


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(suite="measure", kappa=3.5, eps=[0.5, 0.25], replicates=17, master_seed=2 ** 63)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    path = _toml(tmp_path / "c.toml", **cfg.to_dict())
    assert ExperimentConfig.from_toml(path) == cfg


def test_config_field_errors(tmp_path):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({"kappa": 4.5, "replicates": 0, "bogus": 1})
    assert "bogus" in e.value.errors
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({"kappa": 4.5, "replicates": 0})
    assert set(e.value.errors) == {"kappa", "replicates"}
    bad = _toml(tmp_path / "bad.toml", suite="nope")
    assert cli.main(["--config", bad, "run"]) == EXIT_CONFIG


def test_partial_outputs_removed(tmp_path, monkeypatch):
    def boom(cfg, out, threads):
        out.write_json("partial.json", {"x": 1})
        raise RuntimeError("simulated failure")
    monkeypatch.setitem(cli.SUITE_RUNNERS, "relations-sweep", boom)
    cfg = _toml(tmp_path / "c.toml", suite="relations-sweep", out_dir=str(tmp_path / "out"))
    assert cli.main(["--config", cfg, "run"]) == EXIT_INTERNAL
    assert not (tmp_path / "out" / "relations-sweep").exists()


def test_failing_item_gives_nonzero_exit(tmp_path, monkeypatch):
    from frag_explore.checks import CheckItem, CheckOutput

    def fail(cfg, out, threads):
        return [CheckOutput(CheckItem("x", "always fails", 1.0, "0", "0", False))]
    monkeypatch.setitem(cli.SUITE_RUNNERS, "relations-sweep", fail)
    cfg = _toml(tmp_path / "c.toml", suite="relations-sweep", out_dir=str(tmp_path))
    assert cli.main(["--config", cfg, "run"]) == EXIT_FAIL


def test_empty_report_is_not_a_pass(tmp_path):
    m = RunManifest(config={}, tool_version="0", wall_time=0.0, suites={}, files={})
    text = emit_report(m, "text")
    assert "no acceptance items" in text and "FAIL" in text
    doc = json.loads(emit_report(m, "json"))
    assert doc["items"] == [] and doc["passed"] is False
    assert cli.main(["--out-dir", str(tmp_path), "check", "--only", "none"]) == EXIT_FAIL


def test_json_report_schema(tmp_path):
    m = run_experiment(ExperimentConfig(suite="relations-sweep"), out_root=str(tmp_path))
    doc = json.loads(emit_report(m, "json"))
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["passed"] is True and len(doc["items"]) == 1


def test_seed_env_override(tmp_path, monkeypatch, capsys):
    out = tmp_path / "p.csv"
    monkeypatch.setenv("FRAG_EXPLORE_SEED", "5")
    assert cli.main(["--seed", "1", "sample-stable", "--out", str(out)]) == EXIT_PASS
    s5 = json.loads(capsys.readouterr().out)
    monkeypatch.delenv("FRAG_EXPLORE_SEED")
    assert cli.main(["sample-stable", "--seed", "5", "--out", str(out)]) == EXIT_PASS
    assert json.loads(capsys.readouterr().out) == s5
    assert s5["seed"] == 5


def test_samplers_write_documented_columns(tmp_path, capsys):
    assert cli.main(["--seed", "3", "sample-stable", "--out", str(tmp_path / "s.csv")]) == EXIT_PASS
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "time,size,sign"
    summary = json.loads((tmp_path / "s.json").read_text())
    assert {"count", "compensator_drift", "terminal"} <= set(summary)
    assert cli.main(["--seed", "3", "sample-disk", "--out", str(tmp_path / "e.csv")]) == EXIT_PASS
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == \
        "time,pre_state,size,sign,side,kind,post_state"
    assert cli.main(["--seed", "3", "grow-tree", "--floor", "2^-5",
                     "--out", str(tmp_path / "t.json")]) == EXIT_PASS
    doc = json.loads((tmp_path / "t.json").read_text())
    assert isinstance(doc["particles"], list) and isinstance(doc["events"], list)
    assert cli.main(["relations", "--kappa", "3", "--table"]) == EXIT_PASS
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-202] == "beta,rho_prime,P_L,P_R,u_L,u_R,mean_ratio"


def test_domain_error_is_config_error():
    assert cli.main(["relations", "--kappa", "5"]) == EXIT_CONFIG


def test_malthus_and_measure_small(tmp_path, capsys):
    rc = cli.main(["--out-dir", str(tmp_path), "--format", "json", "malthus", "--trees", "200"])
    rep = json.loads(capsys.readouterr().out)
    assert rc in (EXIT_PASS, EXIT_FAIL)
    assert {"mc_root", "mc_root_se", "analytic_delta"} <= set(rep)
    rc = cli.main(["--out-dir", str(tmp_path), "measure", "--trees", "40", "--eps", "2^-5,2^-6"])
    assert rc in (EXIT_PASS, EXIT_FAIL)
    with open(tmp_path / "measure" / "measure_per_tree.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["tree_id", "M_inf_hat", "eps", "rescaled_count"]
    assert len(rows) == 80
    assert json.loads((tmp_path / "measure" / "measure_summary.json").read_text())["trees"] == 40
