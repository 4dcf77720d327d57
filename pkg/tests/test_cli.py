import json

import pytest

from cone_lab import cli

HP_SPEC = {"kind": "halfplane", "a": 1.0}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def entropy_config(tmp_path, out_name="results.jsonl", seed=0):
    cfg = {"model": HP_SPEC, "op": "entropy_estimate", "params": {},
           "seed": seed, "output": str(tmp_path / out_name)}
    return write_json(tmp_path / "cfg.json", cfg)


def read_records(store):
    return [json.loads(line) for line in open(store) if line.strip()]


def test_run_entropy(tmp_path, capsys):
    cfg = entropy_config(tmp_path)
    assert cli.main(["run", cfg]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["ok"] is True
    recs = read_records(tmp_path / "results.jsonl")
    assert len(recs) == 1
    assert recs[0]["outputs"]["h_est"] == pytest.approx(1.0, abs=0.05)
    assert recs[0]["record_hash"] == summary["record_hash"]


def test_run_is_deterministic(tmp_path):
    cfg = entropy_config(tmp_path)
    cli.main(["run", cfg])
    cli.main(["run", cfg])
    recs = read_records(tmp_path / "results.jsonl")
    assert recs[0]["record_hash"] == recs[1]["record_hash"]
    assert recs[0]["config_hash"] == recs[1]["config_hash"]


def test_seed_env_override_changes_hash(tmp_path, monkeypatch):
    cfg = write_json(tmp_path / "cfg.json",
                     {"model": HP_SPEC, "op": "delta_estimate",
                      "params": {"n": 100}, "seed": 0,
                      "output": str(tmp_path / "r.jsonl")})
    cli.main(["run", cfg])
    monkeypatch.setenv("CONE_LAB_SEED", "7")
    cli.main(["run", cfg])
    recs = read_records(tmp_path / "r.jsonl")
    assert recs[0]["seed"] == 0 and recs[1]["seed"] == 7
    assert recs[0]["record_hash"] != recs[1]["record_hash"]


def test_malformed_config_exits_2_without_record(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == 2
    assert not (tmp_path / "results.jsonl").exists()


def test_unknown_op_and_model_exit_2(tmp_path):
    cfg1 = write_json(tmp_path / "c1.json",
                      {"model": HP_SPEC, "op": "no_such_op"})
    assert cli.main(["run", cfg1]) == 2
    cfg2 = write_json(tmp_path / "c2.json",
                      {"model": {"kind": "mystery"}, "op": "entropy_estimate",
                       "output": str(tmp_path / "r.jsonl")})
    assert cli.main(["run", cfg2]) == 2


def test_verify_all_halfplane(tmp_path, capsys):
    spec = write_json(tmp_path / "m.json", HP_SPEC)
    assert cli.main(["verify-all", "--model", spec]) == 0
    out = capsys.readouterr().out
    for suite in ("models", "geometry", "gromov", "hamenstadt",
                  "uniformize", "measures", "analysis"):
        assert any(line.startswith(suite) and "PASS" in line
                   for line in out.splitlines()), suite


def test_verify_all_broken_model_fails_fast(tmp_path, capsys):
    spec = write_json(tmp_path / "m.json", {"kind": "halfplane", "a": -1.0})
    assert cli.main(["verify-all", "--model", spec]) == 1
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert "FAIL" in lines[0] and lines[0].startswith("models")
    assert all("SKIP" in line for line in lines[1:])


def test_export_writes_csv_and_figure(tmp_path, capsys):
    cfg = entropy_config(tmp_path)
    cli.main(["run", cfg])
    out_dir = tmp_path / "out"
    rc = cli.main(["export", "--query", "op=entropy_estimate",
                   "--out", str(out_dir),
                   "--store", str(tmp_path / "results.jsonl")])
    assert rc == 0
    written = [p for p in capsys.readouterr().out.splitlines()
               if p.startswith(str(out_dir))]
    assert any(p.endswith(".csv") for p in written)
    assert any(p.endswith(".png") for p in written)
    csv_path = next(p for p in written if p.endswith(".csv"))
    header = open(csv_path).readline().strip()
    assert "log_V_s" in header


def test_export_no_match_exits_2(tmp_path):
    cfg = entropy_config(tmp_path)
    cli.main(["run", cfg])
    rc = cli.main(["export", "--query", "op=laplace_G",
                   "--out", str(tmp_path / "out"),
                   "--store", str(tmp_path / "results.jsonl")])
    assert rc == 2
    rc2 = cli.main(["export", "--query", "op=entropy_estimate",
                    "--out", str(tmp_path / "out"),
                    "--store", str(tmp_path / "missing.jsonl")])
    assert rc2 == 2
