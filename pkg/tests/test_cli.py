"""End-to-end tests of the command-line pipeline on a fast 1-D system."""

import copy
import json
import os

import numpy as np
import pytest

from roabound.cli import main
from roabound.net import NeuralFunction, load_checkpoint, save_checkpoint

# linear SDE dx = -x dt + 0.5 x dB converges a.s.; every stage of the
# pipeline is cheap on it, which keeps these tests honest but quick
BASE = {
    "system": {
        "n": 1,
        "m": 1,
        "f": ["-x1"],
        "sigma": [["0.5*x1"]],
        "g": "0.1*(x1^2)",
        "domain": [[-2.0, 2.0]],
    },
    "sim": {
        "dt": 0.01,
        "horizon": 10.0,
        "samples_value": 50,
        "samples_prob": 400,
    },
    "train": {
        "hidden": [10, 10],
        "collocation": 200,
        "epochs": 300,
        "learning_rate": 0.001,
    },
    "verify": {"budget": 500000},
    "data_grid": 9,
    "heatmap_resolution": 21,
    "validate_points": 6,
    "seed": 0,
}


def write_config(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """quad + train + certify once; several tests inspect the artifacts."""
    out = tmp_path_factory.mktemp("run")
    doc = copy.deepcopy(BASE)
    doc["out"] = str(out)
    cfg = write_config(out / "config.json", doc)
    assert main(["quad", "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 0
    assert main(["certify", "--config", cfg]) == 0
    return cfg, out


# ---------------------------------------------------------------------------
# config handling and exit codes
# ---------------------------------------------------------------------------

def test_missing_config_exits_2():
    assert main(["quad", "--config", "/nonexistent/cfg.json"]) == 2


def test_invalid_json_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    assert main(["quad", "--config", str(path)]) == 2


def test_unknown_config_key_exits_2(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    doc["tpyo"] = 1
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["quad", "--config", cfg]) == 2


def test_bad_section_value_exits_2(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    doc["sim"]["dt"] = -1.0
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["quad", "--config", cfg]) == 2


def test_malformed_system_exits_2(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    doc["system"]["f"] = ["x1 +"]  # parse error
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["quad", "--config", cfg]) == 2


def test_non_hurwitz_exits_5(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    doc["system"]["f"] = ["x1"]  # unstable linearization
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["quad", "--config", cfg]) == 5


def test_exhausted_budget_exits_3(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["quad", "--config", cfg, "--budget", "2"]) == 3


def test_unknown_override_flag_rejected(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    cfg = write_config(tmp_path / "c.json", doc)
    with pytest.raises(SystemExit):
        main(["quad", "--config", cfg, "--dt", "0.1"])  # not an allowed override


def test_certify_without_artifacts_exits_2(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["certify", "--config", cfg]) == 2


def test_simulate_needs_initial_state(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["out"] = str(tmp_path)
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["simulate", "--config", cfg]) == 2
    assert main(["simulate", "--config", cfg, "--x0", "1,2,3"]) == 2
    assert main(["simulate", "--config", cfg, "--x0", "abc"]) == 2


# ---------------------------------------------------------------------------
# quad artifacts
# ---------------------------------------------------------------------------

def test_quad_report(pipeline):
    _, out = pipeline
    with open(out / "quad.json") as fh:
        doc = json.load(fh)
    P = np.asarray(doc["P"])
    # 1-D: 2P*(-1) + 0.25 P = -1  =>  P = 4/7
    assert abs(P[0, 0] - 4.0 / 7.0) < 1e-12
    assert doc["statuses"] == {
        "solved": "CERTIFIED", "local": "CERTIFIED", "extended": "CERTIFIED",
    }
    assert 0 < doc["c_local"] <= doc["c2"] <= doc["cap"] + 1e-12
    assert doc["probes"]["local"], "probe history should be recorded"
    # timestamps only inside metadata, so reruns stay byte-comparable
    assert "wall_time" not in doc["outcomes"]["local"]
    assert "wall_time" in doc["metadata"]


def test_quad_idempotent(pipeline):
    cfg, out = pipeline
    with open(out / "quad.json") as fh:
        first = json.load(fh)
    assert main(["quad", "--config", cfg]) == 0
    with open(out / "quad.json") as fh:
        second = json.load(fh)
    first.pop("metadata")
    second.pop("metadata")
    assert first == second


# ---------------------------------------------------------------------------
# train artifacts
# ---------------------------------------------------------------------------

def test_train_artifacts(pipeline):
    _, out = pipeline
    net = load_checkpoint(str(out / "checkpoint.json"))
    assert net.sizes == [1, 10, 10, 1]
    with open(out / "losses.csv") as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "epoch,total,residual,boundary,data"
    assert len(lines) == 1 + BASE["train"]["epochs"]
    with open(out / "dataset.csv") as fh:
        rows = fh.read().strip().splitlines()
    assert rows[0] == "x1,w_hat"
    assert len(rows) == 1 + BASE["data_grid"]


def test_train_reproducible_and_seed_sensitive(tmp_path):
    doc = copy.deepcopy(BASE)
    doc["train"]["epochs"] = 40
    doc["data_grid"] = 0  # skip sampling, train on residual only
    runs = {}
    for name, seed in [("a", 0), ("b", 0), ("c", 1)]:
        d = dict(doc, out=str(tmp_path / name))
        cfg = write_config(tmp_path / f"{name}.json", d)
        assert main(["train", "--config", cfg, "--seed", str(seed)]) == 0
        with open(tmp_path / name / "checkpoint.json") as fh:
            runs[name] = fh.read()
    assert runs["a"] == runs["b"]
    assert runs["a"] != runs["c"]


def test_train_accepts_existing_dataset(pipeline, tmp_path):
    cfg_path, out = pipeline
    with open(cfg_path) as fh:
        doc = json.load(fh)
    doc["out"] = str(tmp_path)
    doc["train"]["epochs"] = 30
    cfg = write_config(tmp_path / "c.json", doc)
    code = main(["train", "--config", cfg, "--data", str(out / "dataset.csv")])
    assert code == 0
    assert not (tmp_path / "dataset.csv").exists()  # no resampling
    assert (tmp_path / "checkpoint.json").exists()


# ---------------------------------------------------------------------------
# certify artifacts
# ---------------------------------------------------------------------------

def test_certificate_complete(pipeline):
    _, out = pipeline
    with open(out / "certificate.json") as fh:
        doc = json.load(fh)
    assert set(doc["statuses"]) == {"w_decrease", "v_decrease", "w_in_v", "v_in_w"}
    assert all(s == "CERTIFIED" for s in doc["statuses"].values())
    assert 0 < doc["beta1"] < doc["beta2"]
    assert 0 < doc["c1"] < doc["c2"]
    assert doc["zeta"] > 0
    # handoff level cannot exceed the certified decrease level
    assert doc["c2"] <= doc["extras"]["c2_decrease"] + 1e-12
    assert os.path.exists(doc["checkpoint"])


# ---------------------------------------------------------------------------
# heatmap, validate, export-smt, simulate
# ---------------------------------------------------------------------------

def test_heatmap_outputs(pipeline):
    cfg, out = pipeline
    assert main(["heatmap", "--config", cfg]) == 0
    with open(out / "heatmap.csv") as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "x1,p"
    assert len(lines) == 1 + BASE["heatmap_resolution"]
    vals = np.asarray([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.all((vals[:, 1] >= 0) & (vals[:, 1] <= 1))
    # bound peaks at the center cell
    assert vals[np.argmax(vals[:, 1]), 0] == pytest.approx(0.0, abs=0.1)
    # 1-D domain: no PGM
    assert not (out / "heatmap.pgm").exists()


def test_heatmap_refuses_incomplete_certificate(pipeline, tmp_path):
    cfg_path, out = pipeline
    with open(out / "certificate.json") as fh:
        cert = json.load(fh)
    cert["statuses"]["v_in_w"] = "UNKNOWN"
    with open(cfg_path) as fh:
        doc = json.load(fh)
    doc["out"] = str(tmp_path)
    os.makedirs(tmp_path, exist_ok=True)
    with open(tmp_path / "certificate.json", "w") as fh:
        json.dump(cert, fh)
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["heatmap", "--config", cfg]) == 3


def test_validate_clean_run(pipeline):
    cfg, out = pipeline
    assert main(["validate", "--config", cfg, "--samples", "200"]) == 0
    with open(out / "validation.json") as fh:
        doc = json.load(fh)
    assert doc["red_flags"] == 0
    assert doc["points"] >= 1
    for row in doc["rows"]:
        assert row["ci"][0] <= row["frequency"] <= row["ci"][1]
    assert (out / "validation.txt").exists()


def test_validate_flags_wrong_bound(tmp_path):
    # hand-built "certificate" over a system whose paths escape from |x| > 0.7;
    # the zero net sends every point through the quadratic branch, so the
    # claimed bound is far above the true frequency away from the origin
    doc = copy.deepcopy(BASE)
    doc["system"]["f"] = ["-x1 + 2*(x1^3)"]
    doc["sim"]["horizon"] = 5.0
    doc["out"] = str(tmp_path)
    doc["validate_points"] = 5
    cfg = write_config(tmp_path / "c.json", doc)
    zero = NeuralFunction(
        (np.zeros((4, 1)), np.zeros((1, 4))), (np.zeros(4), np.zeros(1))
    )
    save_checkpoint(zero, str(tmp_path / "checkpoint.json"))
    cert = {
        "P": [[1.0]], "c1": 0.5, "c2": 4.0, "beta1": 0.2, "beta2": 0.8,
        "zeta": 1e-4, "checkpoint": str(tmp_path / "checkpoint.json"),
        "statuses": {k: "CERTIFIED" for k in
                     ("w_decrease", "v_decrease", "w_in_v", "v_in_w")},
        "extras": {},
    }
    with open(tmp_path / "certificate.json", "w") as fh:
        json.dump(cert, fh)
    assert main(["validate", "--config", cfg, "--samples", "300"]) == 4
    with open(tmp_path / "validation.json") as fh:
        report = json.load(fh)
    assert report["red_flags"] >= 1


def test_export_smt_scripts(pipeline):
    cfg, out = pipeline
    assert main(["export-smt", "--config", cfg]) == 0
    names = {"quad_local", "v_decrease", "w_decrease", "w_in_v", "v_in_w"}
    for name in names:
        assert (out / "smt" / f"{name}.smt2").exists()
    poly = (out / "smt" / "v_decrease.smt2").read_text()
    assert "(set-logic QF_NRA)" in poly
    assert "tanh" not in poly
    neural = (out / "smt" / "w_decrease.smt2").read_text()
    assert "(declare-fun tanh (Real) Real)" in neural
    assert neural.strip().endswith("(check-sat)")


def test_simulate_writes_trajectory(pipeline, tmp_path):
    cfg_path, _ = pipeline
    with open(cfg_path) as fh:
        doc = json.load(fh)
    doc["out"] = str(tmp_path)
    cfg = write_config(tmp_path / "c.json", doc)
    assert main(["simulate", "--config", cfg, "--x0", "1.5", "--samples", "20"]) == 0
    with open(tmp_path / "trajectory.csv") as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "t,x1"
    assert len(lines) > 2
    first = [float(v) for v in lines[1].split(",")]
    assert first == [0.0, 1.5]
