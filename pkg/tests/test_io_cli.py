import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from robust_rlhf.cli import main
from robust_rlhf.experiment import RECORD_FIELDS, derive_seed, rate_bounds
from robust_rlhf.io import ConfigError, load_config, load_dataset, load_mdp, mdp_from_dict, parse_config, save_dataset, save_mdp
from robust_rlhf.mdp import LinearMdp, random_linear_mdp
from robust_rlhf.preferences import coverage_diagnostics, sample_dataset

BASE = {
    "mdp": {"S": 4, "A": 2, "d": 4, "H": 3, "seed": 0},
    "N": 400,
    "epsilon_grid": [0.0],
    "pipelines": ["uniform"],
    "oracle": "exact",
    "seeds": [0],
    "pipeline_params": {"T": 3, "K": 2},
}


def _write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_mdp_round_trip(tmp_path, small_mdp):
    save_mdp(small_mdp, tmp_path / "m.json")
    back = load_mdp(tmp_path / "m.json")
    for name in ("rho", "features", "mu", "theta_star"):
        assert np.array_equal(getattr(back, name), getattr(small_mdp, name))
    doc = json.loads((tmp_path / "m.json").read_text())
    assert len(doc["features"]) == 8 and len(doc["features"][0]) == 4
    doc["rho"] = [0.5, 0.5, 0.5, 0.5]
    with pytest.raises(ValueError, match="invalid MDP"):
        mdp_from_dict(doc)
    with pytest.raises(ValueError, match="lacks"):
        mdp_from_dict({"H": 1})


def test_dataset_round_trip(tmp_path, small_mdp, uniform_small):
    data = sample_dataset(small_mdp, uniform_small, uniform_small, 30, 0)
    save_dataset(data, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl", small_mdp.features)
    assert np.array_equal(back.labels, data.labels)
    assert np.array_equal(back.differences(), data.differences())
    (tmp_path / "bad.jsonl").write_text('{"tau0": {}}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        load_dataset(tmp_path / "bad.jsonl", small_mdp.features)


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"epsilon_grid": [0.6]}, "epsilon_grid"),
        ({"seeds": []}, "seeds"),
        ({"oracle": "magic"}, "oracle"),
        ({"attack": "nope"}, "attack"),
        ({"bogus": 1}, "bogus"),
        ({"mdp": {"S": 4, "A": 2, "H": 3}}, "mdp.d"),
        ({"mdp": {"S": 4, "A": 2, "d": 4, "H": 3, "theta_norm": 5}}, "mdp.theta_norm"),
        ({"behavior": {"mu0": {"kind": "greedy"}}}, "behavior.mu0"),
        ({"delta": 1.5}, "delta"),
        ({"threads": 0}, "threads"),
    ],
)
def test_config_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError, match=f"field '{field}'"):
        parse_config({**BASE, **patch})


def test_yaml_syntax_error_reports_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("N: 100\nseeds: [0, 1\noracle: exact\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_config(path)


def test_config_defaults_and_aliases(tmp_path):
    cfg = load_config(_write(tmp_path, {**{k: v for k, v in BASE.items() if k != "pipelines"}, "pipeline": "first-order"}))
    assert cfg.pipelines == ["first-order"]
    assert cfg.behavior["mu0"]["kind"] == "epsilon-greedy"
    assert cfg.to_dict()["N"] == 400


def test_run_single_cell(tmp_path):
    out = tmp_path / "one.csv"
    result = CliRunner().invoke(main, ["run", str(_write(tmp_path, BASE)), "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = _rows(out)
    assert tuple(rows[0]) == RECORD_FIELDS
    assert len(rows) == 2
    record = dict(zip(rows[0], rows[1]))
    assert float(record["suboptimality_gap"]) <= 0.05 * 3
    assert record["oracle_calls"] == "1" and record["error"] == ""
    assert record["confidence_set_contains_true"] in ("true", "false")


def test_run_grid_is_deterministic(tmp_path, monkeypatch):
    doc = {**BASE, "epsilon_grid": [0.0, 0.05, 0.1], "seeds": [0, 1, 2, 3, 4], "pipelines": ["condition-number"]}
    cfg = _write(tmp_path, doc)
    runner = CliRunner()
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert runner.invoke(main, ["run", str(cfg), "--out", str(a)]).exit_code == 0
    assert runner.invoke(main, ["run", str(cfg), "--out", str(b), "--threads", "4"]).exit_code == 0
    monkeypatch.setenv("ROBUST_RLHF_THREADS", "3")
    assert runner.invoke(main, ["run", str(cfg), "--out", str(c)]).exit_code == 0
    assert len(_rows(a)) == 1 + 15
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    sidecar = json.loads(c.with_suffix(".json").read_text())
    assert sidecar["threads"] == 3 and sidecar["failed_cells"] == 0
    assert sidecar["config"]["epsilon_grid"] == [0.0, 0.05, 0.1]
    assert len(sidecar["wall_time_ms"]) == 15 and "version" in sidecar
    assert json.loads(b.with_suffix(".json").read_text())["threads"] == 4


def test_bad_thread_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("ROBUST_RLHF_THREADS", "many")
    result = CliRunner().invoke(main, ["run", str(_write(tmp_path, BASE)), "--out", str(tmp_path / "x.csv")])
    assert result.exit_code != 0 and "ROBUST_RLHF_THREADS" in result.output


def test_failing_cells_become_error_rows(tmp_path):
    doc = {**BASE, "seeds": [0, 1], "pipelines": ["uniform", "first-order"]}
    out = tmp_path / "err.csv"
    result = CliRunner().invoke(main, ["run", str(_write(tmp_path, doc)), "--out", str(out), "--oracle", "rlsvi"])
    assert result.exit_code == 0
    rows = [dict(zip(RECORD_FIELDS, r)) for r in _rows(out)[1:]]
    assert [r["pipeline"] for r in rows] == ["uniform", "first-order"] * 2
    assert all(r["error"] == "" and r["oracle"] == "rlsvi" for r in rows if r["pipeline"] == "uniform")
    assert all("no subgradient" in r["error"] and r["suboptimality_gap"] == "" for r in rows if r["pipeline"] == "first-order")
    assert json.loads(out.with_suffix(".json").read_text())["failed_cells"] == 2
    assert "2 failed" in result.output


def test_attack_override(tmp_path):
    out = tmp_path / "att.csv"
    doc = {**BASE, "epsilon_grid": [0.1]}
    CliRunner().invoke(main, ["run", str(_write(tmp_path, doc)), "--out", str(out), "--attack", "replace"])
    assert dict(zip(RECORD_FIELDS, _rows(out)[1]))["attack"] == "replace"


def test_invalid_config_exit_code(tmp_path):
    result = CliRunner().invoke(main, ["run", str(_write(tmp_path, {**BASE, "N": 2}))])
    assert result.exit_code != 0 and "field 'N'" in result.output


def test_diagnose_report(tmp_path):
    doc = {**BASE, "epsilon_grid": [0.0, 0.1]}
    out = tmp_path / "diag.json"
    result = CliRunner().invoke(main, ["diagnose", str(_write(tmp_path, doc)), "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text())
    cov = report["coverage"]
    assert cov["kappa"] >= 4
    # normalised transitions make the difference covariance singular
    assert cov["xi"] == 0.0 and cov["xi_rowspace"] > 0
    assert report["xi_at_least_5eps"] == {"0": True, "0.1": False}
    assert [b["epsilon"] for b in report["bounds"]] == [0.0, 0.1]
    assert report["bounds"][0]["uniform"] == "inf"


def test_diagnose_rank_deficient_features(tmp_path):
    base = random_linear_mdp(3, 2, 3, H=2, rng=0)
    pad = lambda x: np.concatenate([x, np.zeros(x.shape[:-1] + (1,))], axis=-1)  # noqa: E731
    mdp = LinearMdp(base.rho, pad(base.features), pad(base.mu), pad(base.theta_star))
    save_mdp(mdp, tmp_path / "padded.json")
    doc = {**BASE, "mdp": {"file": "padded.json"}}
    result = CliRunner().invoke(main, ["diagnose", str(_write(tmp_path, doc))])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert report["instance"]["d"] == 4
    assert report["coverage"]["xi"] == 0.0 and np.isfinite(float(report["coverage"]["alpha"]))


def test_rate_bounds_scaling(small_mdp, uniform_small):
    diag = coverage_diagnostics(small_mdp, uniform_small, uniform_small)
    a, b = rate_bounds(diag, 3, 4, 0.01), rate_bounds(diag, 3, 4, 0.04)
    assert b["first_order"] == pytest.approx(2 * a["first_order"])
    assert b["calls_first_order"] == pytest.approx(a["calls_first_order"] / 4)
    assert a["calls_uniform"] == 1


def test_seed_derivation():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(0, c, p) for c in range(20) for p in range(1, 6)}) == 100
    assert 0 <= derive_seed(5, 5, 5) < 2**63


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "robust_rlhf", "--help"], capture_output=True, text=True, check=True)
    assert "run" in out.stdout and "diagnose" in out.stdout
