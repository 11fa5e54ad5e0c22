import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from uncnet.cli import main
from uncnet.forecast import horizon_suite, macro_from_frame, monthly_aggregate, results_table
from uncnet.io import (
    EmptyInput,
    MalformedInput,
    atomic_write_text,
    format_frame,
    parse_float,
    read_connectedness,
    read_frame,
    read_panel,
    read_table,
)
from uncnet.network import directional
from uncnet.pipeline import CONFIG_ENV, ConfigError, Pipeline, load_config
from uncnet.tvp_var import draws_from_frame

FAST = ["--set", "tvp_var.stride=25", "--set", "tvp_var.n_draws=20"]


@pytest.fixture(scope="module")
def demo_inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo")
    assert main(["demo-data", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["pipeline", "--demo", "--out", str(out), *FAST]) == 0
    return out


def _write(path, text):
    Path(path).write_text(text)
    return str(path)


def test_vix_on_simulated_chains(tmp_path):
    chains = tmp_path / "chains.csv"
    assert main(["simulate-chains", "--firms", "A,B", "--days", "3", "--vol", "0.2", "-o", str(chains)]) == 0
    out = tmp_path / "vix.csv"
    assert main(["vix", str(chains), "-o", str(out)]) == 0
    vix = pd.read_csv(out)
    assert len(vix) == 6
    assert np.all(np.abs(vix["vix"] - 0.2) <= 0.005)


def test_zero_spread_and_zero_bid_wings(tmp_path):
    flat = tmp_path / "flat.csv"
    main(["simulate-chains", "--spread", "0", "-o", str(flat)])
    frame = pd.read_csv(flat)
    assert np.array_equal(frame["bid"], frame["ask"])
    wings = tmp_path / "wings.csv"
    main(["simulate-chains", "--zero-bid-below", "0.05", "-o", str(wings)])
    assert (pd.read_csv(wings)["bid"] == 0).sum() > 4
    out = tmp_path / "vix.csv"
    assert main(["vix", str(wings), "-o", str(out)]) == 0
    assert abs(pd.read_csv(out)["vix"].iloc[0] - 0.2) <= 0.02


def test_vix_empty_file(tmp_path, capsys):
    assert main(["vix", _write(tmp_path / "e.csv", ""), "-o", str(tmp_path / "v.csv")]) == 2
    assert "EmptyInput" in capsys.readouterr().err
    assert main(["vix", _write(tmp_path / "h.csv", "quote_date,expiry_date,firm_id,spot,rate,strike,kind,bid,ask\n"), "-o", str(tmp_path / "v.csv")]) == 2


def test_vix_malformed_row_reported_and_strict(tmp_path, caplog, capsys):
    chains = tmp_path / "chains.csv"
    main(["simulate-chains", "-o", str(chains)])
    lines = chains.read_text().splitlines()
    lines.insert(5, "2020-01-02,2020-02-01,F1,100,0.02,abc,call,1,2")
    bad = _write(tmp_path / "bad.csv", "\n".join(lines) + "\n")
    assert main(["vix", bad, "-o", str(tmp_path / "v.csv")]) == 0
    assert "line 6" in caplog.text
    assert main(["vix", bad, "-o", str(tmp_path / "v2.csv"), "--strict"]) == 2
    assert "line 6" in capsys.readouterr().err
    assert not (tmp_path / "v2.csv").exists()


def test_crossed_quote_is_malformed(tmp_path):
    chains = tmp_path / "chains.csv"
    main(["simulate-chains", "-o", str(chains)])
    lines = chains.read_text().splitlines()
    fields = lines[10].split(",")
    fields[7], fields[8] = "5.0", "1.0"
    lines[10] = ",".join(fields)
    bad = _write(tmp_path / "bad.csv", "\n".join(lines) + "\n")
    assert main(["vix", bad, "-o", str(tmp_path / "v.csv"), "--strict"]) == 2


def test_read_table_issues(tmp_path):
    path = _write(tmp_path / "t.csv", "a,b\n1,2\n3\nx,4\n\n5,6\n")
    frame, issues = read_table(path, {"a": parse_float, "b": parse_float})
    assert frame.to_numpy().tolist() == [[1.0, 2.0], [5.0, 6.0]]
    assert [i.line for i in issues] == [3, 4]
    with pytest.raises(MalformedInput):
        read_table(path, {"a": parse_float, "c": parse_float})
    with pytest.raises(MalformedInput) as err:
        read_table(_write(tmp_path / "u.csv", "a\nx\n"), {"a": parse_float})
    assert err.value.issues[0].line == 2
    with pytest.raises(EmptyInput):
        read_table(_write(tmp_path / "v.csv", "a\n"), {"a": parse_float})


def test_atomic_write_keeps_old_file_on_failure(tmp_path):
    target = tmp_path / "out.csv"
    atomic_write_text(target, "old\n")
    with pytest.raises(TypeError):
        atomic_write_text(target, 42)
    assert target.read_text() == "old\n"
    assert [p.name for p in tmp_path.iterdir()] == ["out.csv"]


def test_simulate_var_truth(tmp_path, capsys):
    const = tmp_path / "const"
    assert main(["simulate-var", "--regime", "constant", "-o", str(const)]) == 0
    truth = pd.read_csv(const / "truth.csv")
    assert truth.drop(columns=["date", "u"]).nunique().max() == 1
    zero = tmp_path / "zero"
    main(["simulate-var", "--own", "0", "--cross-low", "0", "--vol", "1", "-o", str(zero)])
    assert np.all(pd.read_csv(zero / "truth.csv")["C"] == 0.0)
    one = tmp_path / "one"
    main(["simulate-var", "--regime", "one-way", "--n", "4", "-o", str(one)])
    t = pd.read_csv(one / "truth.csv")
    assert np.all(t["NET_V1"] > 0)
    assert np.all(t[["NET_V2", "NET_V3", "NET_V4"]] < 0)
    assert main(["simulate-var", "--own", "0.99", "--cross-low", "0.2", "-o", str(tmp_path / "x")]) == 2
    assert "UnstableSpec" in capsys.readouterr().err


def test_estimate_network_classify_on_simulated_panel(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate-var", "--regime", "one-way", "--T", "300", "-o", str(sim)])
    panel = str(sim / "panel.csv")
    draws_dir = tmp_path / "draws"
    assert main(["estimate", panel, "-o", str(draws_dir), "--dates", "2000-06-01", "--n-draws", "10", "--lags", "1"]) == 0
    frame = read_frame(draws_dir / "draws_2000-06-01.csv")
    ds = draws_from_frame(frame, ["V1", "V2", "V3"], lags=1)
    assert ds.n_draws == 10 and np.all(np.linalg.eigvalsh(ds.sigma) > 0)
    assert main(["estimate", panel, "-o", str(draws_dir), "--dates", "1999-01-01"]) == 2

    conn = tmp_path / "conn.csv"
    adj = tmp_path / "adj.csv"
    args = ["network", panel, "-o", str(conn), "--adjacency", str(adj), "--n-draws", "20", "--stride", "30", "--lags", "1"]
    assert main(args) == 0
    series = read_connectedness(conn)
    assert len(series) == 10
    assert np.all(series.node_stat("net")["V1"] > 0)
    weights = pd.read_csv(adj).groupby(["date", "receiver"])["weight"].sum()
    np.testing.assert_allclose(weights, 1.0, atol=1e-10)
    roll = tmp_path / "roll.csv"
    assert main(["network", panel, "-o", str(roll), "--method", "rolling", "--window", "100", "--lags", "1"]) == 0
    assert len(read_frame(roll)) == 201

    cls = tmp_path / "cls"
    assert main(["classify", str(conn), "-o", str(cls), "--top-k", "1", "--bottom-k", "1"]) == 0
    assert json.loads((cls / "classification.json").read_text())["hubs"] == ["V1"]
    assert main(["classify", str(conn), "-o", str(cls), "--preset", "strict"]) == 2


def test_pipeline_outputs_and_invariants(demo_run):
    manifest = json.loads((demo_run / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    expected = {"panel.csv", "connectedness.csv", "phase_table.csv", "classification.json", "regressions.json", "connectedness_hubs.csv"}
    assert expected <= set(manifest["outputs"])
    assert [s["name"] for s in manifest["stages"]][:3] == ["vix", "panel", "connectedness"]
    panel = read_panel(demo_run / "panel.csv")
    assert panel.N == 6 and panel.T == 600
    adj = pd.read_csv(demo_run / "connectedness_adjacency.csv")
    for _, block in adj.groupby("date"):
        m = block.pivot(index="receiver", columns="transmitter", values="weight").to_numpy()
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-10)
        s = directional(m)
        assert abs(s.net.sum()) < 1e-8
        assert s.to.sum() == pytest.approx(s.from_.sum(), abs=1e-8)
        assert np.all(s.agg >= np.abs(s.net) - 1e-12)
    conn = read_frame(demo_run / "connectedness.csv")
    assert np.all((conn["C_median"] >= 0) & (conn["C_median"] <= 100))
    assert np.all(conn["C_p2.5"] <= conn["C_median"]) and np.all(conn["C_median"] <= conn["C_p97.5"])
    reg = json.loads((demo_run / "regressions.json").read_text())
    assert {"CFNAI__C", "CFNAI_exp__C", "CFNAI_rec__C", "CFNAI__C_hubs"} <= set(reg)


def test_output_csvs_round_trip(demo_run):
    for path in sorted(demo_run.glob("*.csv")):
        text = path.read_text()
        assert format_frame(read_frame(path), index=False) == text, path.name
    series = read_connectedness(demo_run / "connectedness.csv")
    assert format_frame(series.to_frame()) == (demo_run / "connectedness.csv").read_text()
    panel = read_panel(demo_run / "panel.csv")
    assert format_frame(panel.to_frame()) == (demo_run / "panel.csv").read_text()


def test_predict_command(demo_run, tmp_path, demo_inputs):
    out = tmp_path / "pred"
    args = [
        "predict",
        "--macro", str(demo_inputs / "macro.csv"),
        "--target", "CFNAI",
        "--connectedness", str(demo_run / "connectedness.csv"),
        "--controls", "OIL:log_diff,TS",
        "--horizons", "1,3",
        "-o", str(out),
    ]  # fmt: skip
    assert main(args) == 0
    table = pd.read_csv(out / "regression_CFNAI.csv", index_col=0, dtype=str)
    assert list(table.columns) == ["h=1", "h=3"]
    macro = macro_from_frame(read_frame(demo_inputs / "macro.csv"), {"OIL": "log_diff"})
    c = monthly_aggregate(read_connectedness(demo_run / "connectedness.csv").total_stat(), "C")
    direct = horizon_suite(macro["CFNAI"], [c, macro["OIL"], macro["TS"]], [1, 3])
    assert table.loc["Obs"].tolist() == [str(r.nobs) for r in direct.values()]
    assert table.loc["C"].tolist() == results_table(direct).loc["C"].tolist()
    assert {"CFNAI", "CFNAI_exp", "CFNAI_rec"} == set(json.loads((out / "regressions.json").read_text()))
    assert main(args[:-2] + ["--target", "NOPE", "-o", str(out)]) == 2


def test_missing_calendar_fails_before_computation(demo_inputs, tmp_path, capsys):
    out = tmp_path / "out"
    cfg = demo_inputs / "demo.ini"
    code = main(["pipeline", "--config", str(cfg), "--out", str(out), "--set", "inputs.calendar=/no/such/calendar.csv"])
    assert code == 2
    assert "calendar" in capsys.readouterr().err
    assert not out.exists()


def test_stage_failure_writes_partial_manifest(demo_inputs, tmp_path):
    out = tmp_path / "out"
    code = main(["pipeline", "--config", str(demo_inputs / "demo.ini"), "--out", str(out), *FAST, "--set", "predict.targets=NOPE"])
    assert code == 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "failed" and manifest["error"].startswith("predict")
    assert "connectedness" in [s["name"] for s in manifest["stages"]]
    assert not list(out.glob(".*.tmp"))


def test_config_env_var_and_overrides(demo_inputs, tmp_path, monkeypatch):
    monkeypatch.setenv(CONFIG_ENV, str(demo_inputs / "demo.ini"))
    monkeypatch.chdir(tmp_path)
    assert main(["pipeline", *FAST, "--set", "predict.horizons=1", "--set", "classify.subnetworks=no"]) == 0
    manifest = json.loads((tmp_path / "uncnet-demo-out" / "manifest.json").read_text())
    assert manifest["config"]["n_draws"] == 20 and manifest["config"]["horizons"] == [1]
    assert "connectedness_hubs.csv" not in manifest["outputs"]
    monkeypatch.delenv(CONFIG_ENV)
    assert main(["pipeline"]) == 2


def test_config_validation_and_hash(demo_inputs):
    cfg = demo_inputs / "demo.ini"
    base = load_config(cfg)
    assert base.firm_vix == str(demo_inputs / "firm_vix.csv")
    assert load_config(cfg, {"run.workers": "8"}).hash() == base.hash()
    assert load_config(cfg, {"run.out": "/elsewhere"}).hash() == base.hash()
    assert load_config(cfg, {"tvp_var.seed": "1"}).hash() != base.hash()
    for bad in ({"tvp_var.n_draws": "0"}, {"panel.fill_limit": "-1"}, {"run.workers": "0"}, {"classify.share": "odd"}):
        with pytest.raises(ConfigError):
            Pipeline(load_config(cfg, bad))
    with pytest.raises(ConfigError):
        load_config(cfg, {"tvp_var.nope": "1"})
    with pytest.raises(ConfigError):
        load_config(cfg, {"tvp_var.lags": "two"})
    with pytest.raises(ConfigError):
        Pipeline(load_config(cfg, {"inputs.chains": str(cfg)}))


def test_pipeline_from_chains(tmp_path):
    chains = tmp_path / "chains.csv"
    firms = "A1,A2,B1,B2"
    main(["simulate-chains", "--firms", firms, "--days", "40", "--expiry-days", "23,37", "--seed", "3", "-o", str(chains)])
    caps = pd.DataFrame({"firm_id": firms.split(","), "date": "2020-01-02", "market_cap": [1.0, 2.0, 3.0, 1.0]})
    caps.to_csv(tmp_path / "caps.csv", index=False)
    _write(tmp_path / "membership.csv", "firm_id,industry_id,start,end\nA1,A,2020-01-01,2021-01-01\nA2,A,2020-01-01,2021-01-01\nB1,B,2020-01-01,2021-01-01\nB2,B,2020-01-01,2021-01-01\n")
    cfg = _write(
        tmp_path / "run.ini",
        "[inputs]\nchains = chains.csv\ncaps = caps.csv\nmembership = membership.csv\n"
        "[panel]\nfill_limit = 50\n"
        "[tvp_var]\nlags = 1\nn_draws = 10\n[classify]\ntop_k = 1\nbottom_k = 1\nsubnetworks = no\n",
    )
    out = tmp_path / "out"
    assert main(["pipeline", "--config", cfg, "--out", str(out)]) == 0
    vix = pd.read_csv(out / "firm_vix.csv")
    assert len(vix) == 160 and np.all(np.abs(vix["vix"] - 0.2) < 0.01)
    assert set(json.loads((out / "manifest.json").read_text())["outputs"]) >= {"firm_vix.csv", "panel.csv", "connectedness.csv"}
