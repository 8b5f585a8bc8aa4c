import csv
import json

import numpy as np
import pytest

from wristemg import cli
from wristemg.dsp.session import save_session
from wristemg.errors import ConfigError
from wristemg.experiments import (
    Condition,
    ExperimentConfig,
    expand_jobs,
    reproduce,
    run_experiment,
    write_report,
)
from wristemg.grid import ChannelSubset, build_maize_layout, classify_density, get_layout
from wristemg.synth import generate_session, separable_spec

TINY = {"filters": [4, 8], "dense": [16, 6]}


@pytest.fixture(scope="module")
def sessions(tmp_path_factory):
    root = tmp_path_factory.mktemp("sessions")
    paths = {}
    for name, sensor in (("m1", "maize"), ("m2", "maize"), ("q1", "quattro")):
        spec = separable_spec(sensor, seed=len(paths), reps_per_gesture=1, subject_id=name)
        paths[name] = str(save_session(generate_session(spec), root / name))
    return paths


def tiny_cfg(experiment, paths, **kw):
    doc = dict(experiment=experiment, sessions=[paths["m1"]], folds=[0, 3], epochs=1, patience=1,
               subsets_per_fold=1, model=TINY)
    doc.update(kw)
    return ExperimentConfig(**doc)


def test_config_parsing(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({"experiment": "region", "epoch": 3})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"arch": "cnn"})
    (tmp_path / "c.json").write_text(json.dumps({"experiment": "density", "sessions": ["s1"], "out": "res"}))
    cfg = ExperimentConfig.load(tmp_path / "c.json")
    assert cfg.resolve(cfg.sessions[0]) == tmp_path / "s1"
    assert cfg.resolve(cfg.out) == tmp_path / "res"
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")
    for bad in ({"experiment": "nope"}, {"experiment": "region", "arch": "rnn"},
                {"experiment": "region", "folds": [10]}, {"experiment": "region", "counts": [0]}):
        with pytest.raises(ConfigError):
            ExperimentConfig(**bad).validate()


def test_fast_mode_reductions():
    cfg = ExperimentConfig("region", fast=True, epochs=50, patience=10, subsets_per_fold=10).effective()
    assert (cfg.subsets_per_fold, cfg.epochs, cfg.patience) == (2, 5, 2)
    cfg = ExperimentConfig("region", fast=True, epochs=3).effective()
    assert cfg.epochs == 3


def test_job_expansion():
    L = build_maize_layout()
    conds = [Condition("fixed", "mono", L, tuple(L.ids)), Condition("n4", "mono", L, n=4, density="high")]
    report = {"skipped": []}
    cfg = ExperimentConfig("density", subsets_per_fold=3, folds=[1, 4])
    jobs = expand_jobs(cfg, conds, 1, report)
    fixed = [j for j in jobs if j.condition == 0]
    assert [(j.subset_index, j.fold) for j in fixed] == [(1, 1), (4, 4)]
    sampled = [j for j in jobs if j.condition == 1]
    assert [j.subset_index for j in sampled] == [1, 4, 11, 14, 21, 24]
    assert all(j.fold == j.subset_index % 10 for j in sampled)
    for j in sampled:
        assert classify_density(ChannelSubset(j.channels, "maize"), L).value == "high"
    # draws depend on the subset index only, not on which folds were requested
    all_folds = expand_jobs(ExperimentConfig("density", subsets_per_fold=3), conds, 1, report)
    by_index = {j.subset_index: j.channels for j in all_folds if j.condition == 1}
    assert all(by_index[j.subset_index] == j.channels for j in sampled)
    impossible = [Condition("n8-low", "mono", L, n=8, density="low", region="extensor")]
    assert expand_jobs(cfg, impossible, 1, report) == []
    assert report["skipped"][0]["condition"] == "n8-low"


def test_region_and_channel_count_share_fixed_results(sessions):
    region = run_experiment(tiny_cfg("region", sessions))
    names = [c["name"] for c in region["conditions"]]
    assert names == ["All", "Ext.", "Fle."]
    assert region["stats"]["unit"] == "evaluation"
    assert {"anova", "tukey", "normality"} <= set(region["stats"])
    counts = run_experiment(tiny_cfg("channel-count", sessions, counts=[32, 4]))
    c32 = next(c for c in counts["conditions"] if c["name"] == "32")
    assert c32["accuracies"] == region["conditions"][0]["accuracies"]
    assert counts["stats"]["reference_condition"] == "32"
    assert all("32" in (p["group_a"], p["group_b"]) for p in counts["stats"]["vs_reference"])
    ev = [e for e in counts["evaluations"] if e["condition_name"] == "4"]
    assert len(ev) == 2 and all(len(e["channels"]) == 4 for e in ev)
    with pytest.raises(ConfigError):
        run_experiment(tiny_cfg("channel-count", sessions, counts=[40]))


def test_subject_mean_aggregation(sessions):
    rep = run_experiment(tiny_cfg("region", sessions, sessions=[sessions["m1"], sessions["m2"]], folds=[0]))
    for c in rep["conditions"]:
        agg = c["aggregation"]
        assert set(agg["per_subject_means"]) == {"0", "1"}
        assert agg["mean_of_subject_means"] == pytest.approx(np.mean(list(agg["per_subject_means"].values())))
        assert c["n_evaluations"] == 2


def test_reference_experiment(sessions):
    rep = run_experiment(tiny_cfg("reference", sessions, folds=[0]))
    assert [c["name"] for c in rep["conditions"]] == ["M-mono-32", "M-mono-15", "M-bi-16"]
    assert any("Q-bi-15" in w for w in rep["warnings"])
    m15 = [e for e in rep["evaluations"] if e["condition_name"] == "M-mono-15"][0]["channels"]
    assert sum(c <= 16 for c in m15) == 8 and len(m15) == 15
    rep = run_experiment(tiny_cfg("reference", sessions, folds=[0], quattro_sessions=[sessions["q1"]]))
    assert rep["conditions"][-1]["name"] == "Q-bi-15"
    assert rep["provenance"]["bipolar_pairs"][0] == [1, 2]


def test_density_experiment_and_csv(sessions, tmp_path):
    rep = run_experiment(tiny_cfg("density", sessions, folds=[0, 1, 2], density_counts=[4], density_levels=["high", "low"]))
    assert [c["name"] for c in rep["conditions"]] == ["n4-high", "n4-low"]
    for e in rep["evaluations"]:
        assert e["density"] == e["condition_name"].split("-")[1]
        assert e["fom"] == pytest.approx(e["accuracy"] / e["dist"])
    assert "4" in rep["regression"] and "4" in rep["stats_per_count"]
    write_report(rep, tmp_path, build_maize_layout())
    rows = list(csv.DictReader(open(tmp_path / "evaluations.csv")))
    assert len(rows) == 6 and {"dist", "fom", "density"} <= set(rows[0])
    assert json.loads((tmp_path / "report.json").read_text())["experiment"] == "density"


def test_attribution_experiment(sessions, tmp_path):
    rep = run_experiment(tiny_cfg("attribution", sessions, folds=[0], ig_steps=4, ig_windows_per_gesture=2))
    maps = rep["attribution"]["maps"]
    assert [m["gesture"] for m in maps] == ["idle", "swipe-left", "swipe-right", "swipe-up", "one-tap", "taps"]
    for m in maps:
        assert len(m["scores"]) == 32 and min(m["scores"]) == 0.0 and max(m["scores"]) == 1.0
    write_report(rep, tmp_path, build_maize_layout())
    rows = list(csv.DictReader(open(tmp_path / "importance_maps.csv")))
    assert len(rows) == 6 * 32


def test_reproduce_is_bit_identical_across_workers(sessions, tmp_path):
    rep = run_experiment(tiny_cfg("channel-count", sessions, counts=[8]))
    path = write_report(rep, tmp_path)
    same, fresh = reproduce(path, workers=2)
    assert same
    assert fresh["provenance"]["config"]["workers"] == 2


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_inspect_and_stats(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "inspect-layout", "maize", "--subset", "1,2,5,6")
    doc = json.loads(out)
    assert code == 0 and doc["subset"]["density"] == "high" and doc["subset"]["dist"] == 1.0
    code, out, _ = run_cli(capsys, "inspect-layout", "quattro", "--circumference", "30", "--subset", "1,3")
    assert json.loads(out)["subset"]["dist"] == 4.0
    code, out, _ = run_cli(capsys, "stats", "anova", "--group", "1,2,3", "--group", "2,3,4", "--group", "3,4,5")
    assert code == 0 and json.loads(out)["p_value"] == pytest.approx(0.125)
    (tmp_path / "d.json").write_text(json.dumps({"x": [1, 2, 3, 4], "y": [1, 3, 2, 5]}))
    code, out, _ = run_cli(capsys, "--out", str(tmp_path / "o"), "stats", "regression", "--data", str(tmp_path / "d.json"))
    assert code == 0 and (tmp_path / "o" / "regression.json").exists()
    code, out, _ = run_cli(capsys, "stats", "tukey", "--group", "1,2,3", "--group", "5,6,7", "--alpha", "0.01")
    assert json.loads(out)["extras"]["alpha"] == 0.01


def test_cli_errors(capsys):
    code, _, err = run_cli(capsys, "stats", "anova")
    assert code == 2 and json.loads(err)["error"] == "ConfigError"
    code, _, err = run_cli(capsys, "stats", "anova", "--group", "1,1", "--group", "1,1")
    assert code == 1 and json.loads(err)["error"] == "StatsError"
    code, _, err = run_cli(capsys, "inspect-layout", "maize", "--subset", "1,99")
    assert code == 1 and json.loads(err)["error"] == "LayoutError"
    code, _, _ = run_cli(capsys, "run", "nonsense")
    assert code == 2


def test_cli_synth_run_reproduce(capsys, tmp_path, sessions):
    code, out, _ = run_cli(capsys, "synth", "--preset", "planted", "--targets", "3,20", "--seed", "2",
                           "--out", str(tmp_path / "s"))
    assert code == 0 and json.loads(out)["spec"]["seed"] == 2
    assert (tmp_path / "s" / "session.json").exists()
    (tmp_path / "cfg.json").write_text(json.dumps({
        "experiment": "region", "sessions": [sessions["m1"]], "folds": [0], "epochs": 1, "model": TINY, "out": "res",
    }))
    code, out, _ = run_cli(capsys, "run", "region", "--config", str(tmp_path / "cfg.json"), "--seed", "5")
    assert code == 0
    summary = json.loads(out)
    assert set(summary["conditions"]) == {"All", "Ext.", "Fle."}
    report = json.loads((tmp_path / "res" / "report.json").read_text())
    assert report["provenance"]["config"]["seed"] == 5
    code, out, _ = run_cli(capsys, "reproduce", str(tmp_path / "res" / "report.json"))
    assert code == 0 and json.loads(out)["identical"]
    code, _, err = run_cli(capsys, "run", "density", "--config", str(tmp_path / "cfg.json"))
    assert code == 2 and "config is for" in json.loads(err)["message"]


def test_layout_lookup():
    assert len(get_layout("maize-bi-16")) == 16
