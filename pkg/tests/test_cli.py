import json
import math

import numpy as np
import pytest

from sgflow import cli
from sgflow.cli import EXPERIMENTS, ConfigError, aggregate, main, parse_config, stability_experiment


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_aggregate_contract():
    a = aggregate([2.0, 2.0, 2.0])
    assert a["stderr"] == 0.0 and a["mean"] == 2.0 and a["q50"] == 2.0
    assert aggregate([1.5])["stderr"] == cli.NA
    with pytest.raises(ValueError):
        aggregate([])
    x = np.random.default_rng(7).normal(3.0, 2.0, 5000)
    a = aggregate(x)
    assert abs(a["mean"] - 3.0) <= 3 * a["stderr"]
    assert a["q05"] < a["q25"] < a["q50"] < a["q75"] < a["q95"]


def test_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in EXPERIMENTS)
    assert len(EXPERIMENTS) == 12


def test_unknown_experiment_lists_names(tmp_path, capsys):
    assert main(["run", "--config", write(tmp_path, {"experiment": "nope"})]) == 2
    err = capsys.readouterr().err
    assert "h1-divergence" in err and "bilinear-bounds" in err


@pytest.mark.parametrize("cfg", [{"experiment": "sumsum", "colour": 1},
                                 {"experiment": "sumsum", "params": {"bogus": 1}},
                                 {"experiment": "solve", "solver": {"bogus": 1}},
                                 {"seed": 1},
                                 [1, 2]])
def test_config_errors(tmp_path, cfg):
    assert main(["run", "--config", write(tmp_path, cfg)]) == 2


def test_malformed_json_and_missing_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["run", "--config", str(p)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_bad_thread_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("SGFLOW_THREADS", "many")
    assert main(["run", "--config", write(tmp_path, {"experiment": "sumsum"})]) == 2


def test_experiment_failure_exit_code(tmp_path):
    cfg = {"experiment": "sumsum", "params": {"pairs": [[1, 1]]}}
    assert main(["run", "--config", write(tmp_path, cfg)]) == 1


def test_run_writes_reproducible_artifacts(tmp_path):
    cfg = {"experiment": "regularize-z", "replicas": 20, "K": 16, "params": {"nt": 4}}
    path = write(tmp_path, cfg)
    outs = []
    for d in ("a", "b"):
        assert main(["run", "--config", path, "--seed", "7", "--out", str(tmp_path / d)]) == 0
        outs.append(((tmp_path / d / "z_difference.csv").read_bytes(),
                     (tmp_path / d / "manifest.json").read_bytes()))
    assert outs[0][0] == outs[1][0]
    m0, m1 = (json.loads(o[1]) for o in outs)
    assert m0["config"].pop("output") != m1["config"].pop("output")
    assert m0 == m1
    header, first = outs[0][0].decode().splitlines()[:2]
    assert header == "N,estimate,stderr,exact"
    # 17 significant digits round-trip doubles exactly
    assert all(float(v) == float(f"{float(v):.17g}") for v in first.split(","))
    man = json.loads(outs[0][1])
    for key in cli.TOP_KEYS:
        assert key in man["config"]
    assert man["config"]["seed"] == 7 and man["config"]["replicas"] == 20
    assert man["e1"] > 0 and man["e2"] > 0
    assert "3.2" in man["probe_field_law"]


def test_seed_changes_results(tmp_path):
    base = {"experiment": "regularize-z", "replicas": 10, "K": 8, "params": {"nt": 3}}
    res = []
    for s in (1, 2):
        _, r = cli.run_experiment(base, seed=s)
        res.append(r.tables["z_difference"][1])
    assert res[0] != res[1]


def test_thread_count_does_not_change_results(monkeypatch):
    cfg = {"experiment": "solve-rough", "replicas": 3}
    monkeypatch.setenv("SGFLOW_THREADS", "1")
    _, a = cli.run_experiment(cfg)
    monkeypatch.setenv("SGFLOW_THREADS", "2")
    _, b = cli.run_experiment(cfg)
    assert a.tables == b.tables


def test_stability_identity_gives_exact_zeros():
    cfg = parse_config({"experiment": "stability", "replicas": 2, "K": 8, "T": 0.01, "N_list": [4, 8],
                        "operators": {"phi": {"kind": "identity"}}})
    rep = stability_experiment(cfg)
    for N in rep.N_list:
        assert rep.samples[N] == [0.0, 0.0]
        assert rep.excluded[N] == 0
    assert rep.deltas == pytest.approx([0.025, 0.05, 0.1])


def test_stability_cutoff_small():
    cfg = parse_config({"experiment": "stability", "replicas": 3, "K": 16, "T": 0.02, "N_list": [4, 8]})
    rep = stability_experiment(cfg)
    assert all(len(rep.samples[N]) + rep.excluded[N] == 3 for N in rep.N_list)
    zc = [rep.error_components[N]["z_part"] for N in rep.N_list]
    bc = [rep.error_components[N]["B_part"] for N in rep.N_list]
    assert zc[1] < zc[0] and bc[1] < bc[0]
    assert all(math.isfinite(x) and x > 0 for N in rep.N_list for x in rep.samples[N])


def test_parse_config_rejects_family():
    cfg = parse_config({"experiment": "stability", "operators": {"phi": {"kind": "kernel"}}})
    with pytest.raises(ConfigError):
        stability_experiment(cfg)
