import csv
import hashlib
import json
from datetime import date

import numpy as np
import pytest

from asthma_risk import cli, features, lasso, pipeline
from asthma_risk.cohort import PredictionContext
from asthma_risk.lasso import LinearModel

SMALL = ["--n-patients", "1500", "--epochs", "3", "--lambda-count", "5"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "a"
    assert run("pipeline", "--seed", 3, "--out", out, *SMALL) == 0
    return out


def test_pipeline_artifact_set(small_run):
    files = {p.relative_to(small_run).as_posix() for p in small_run.rglob("*") if p.is_file()}
    for rel in ("cohort/funnel.json", "models/lasso.json", "models/ann.json", "eval/lasso.json",
                "eval/ann.json", "eval/comparison.txt", "reports/alert_lasso.csv",
                "reports/alert_ann.csv", "features/features.csv", "manifest.json"):
        assert rel in files


def test_manifest_lists_every_file_with_its_hash(small_run):
    m = json.loads((small_run / "manifest.json").read_text())
    listed = {a["path"]: a["sha256"] for a in m["artifacts"]}
    on_disk = {p.relative_to(small_run).as_posix() for p in small_run.rglob("*") if p.is_file()}
    assert set(listed) == on_disk - {"manifest.json"}
    for rel, digest in listed.items():
        assert hashlib.sha256((small_run / rel).read_bytes()).hexdigest() == digest
    assert m["seed"] == 3 and len(m["config_sha256"]) == 64


def test_rerun_is_byte_identical(small_run, tmp_path):
    out = tmp_path / "b"
    assert run("pipeline", "--seed", 3, "--out", out, *SMALL) == 0
    assert (out / "manifest.json").read_bytes() == (small_run / "manifest.json").read_bytes()


def test_alert_report_is_high_tier_only(small_run):
    fm = features.read_matrix(small_run / "features/features.csv")
    rows = list(csv.DictReader((small_run / "reports/alert_lasso.csv").open()))
    assert len(rows) == -(-len(fm) // 10)
    assert {r["tier"] for r in rows} == {"High"}
    scores = [float(r["score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert [int(r["rank"]) for r in rows] == list(range(1, len(rows) + 1))
    assert list(rows[0])[:6] == ["generated_at", "prediction_date", "patient_id", "score", "tier", "rank"]


def test_lasso_only_run(tmp_path):
    out = tmp_path / "l"
    assert run("pipeline", "--seed", 3, "--out", out, "--models", "lasso", *SMALL) == 0
    names = [p.name for p in out.rglob("*")]
    assert not [n for n in names if "ann" in n]
    assert not (out / "eval/comparison.json").exists()


def test_missing_extract_dir_fails_and_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert run("pipeline", "--seed", 1, "--out", tmp_path / "o", "--extract-dir", missing) != 0
    assert str(missing) in capsys.readouterr().err


def test_seed_is_mandatory(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "s", "--n-patients", 50) != 0
    assert "seed" in capsys.readouterr().err
    assert run("pipeline", "--out", tmp_path / "p") != 0


def test_failed_stage_leaves_partial_files(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ValueError("training exploded")
    monkeypatch.setattr(pipeline, "stage_train", boom)
    out = tmp_path / "f"
    assert run("pipeline", "--seed", 3, "--out", out, "--n-patients", 300) != 0
    assert (out / "cohort/funnel.json.partial").exists()
    assert not (out / "cohort/funnel.json").exists()
    assert not (out / "manifest.json").exists()


def test_config_file_and_flag_override(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 5\nn_patients = 200\nmodels = lasso\nprediction_date = none\n")
    cfg = pipeline.load_config(ini, {"n_patients": "300"})
    assert (cfg.seed, cfg.n_patients, cfg.models, cfg.prediction_date) == (5, 300, "lasso", None)
    assert cfg.as_of == date(2014, 3, 31)
    ini.write_text("[run]\nseed = 5  ; inline note\nmodels = ann  # another\n")
    cfg = pipeline.load_config(ini)
    assert (cfg.seed, cfg.models) == (5, "ann")
    ini.write_text("[run]\nsead = 5\n")
    with pytest.raises(ValueError, match="sead"):
        pipeline.load_config(ini)
    with pytest.raises(FileNotFoundError):
        pipeline.load_config(tmp_path / "absent.ini")
    with pytest.raises(ValueError):
        pipeline.RunConfig(models="forest")


def test_config_hash_ignores_output_location():
    a = pipeline.RunConfig(out_dir="x", seed=1)
    assert a.digest() == pipeline.RunConfig(out_dir="y", seed=1).digest()
    assert a.digest() != pipeline.RunConfig(out_dir="x", seed=2).digest()


def test_stepwise_subcommands(tmp_path, capsys):
    ext, work = tmp_path / "ext", tmp_path / "work"
    assert run("synth", "--seed", 4, "--out", ext, "--n-patients", 800) == 0
    assert run("ingest", "--extract-dir", ext, "--out", work) == 0
    assert json.loads((work / "ingest/summary.json").read_text())["rejects"] == 0
    assert run("cohort", "--extract-dir", ext, "--out", work) == 0
    assert json.loads((work / "cohort/funnel.json").read_text())["ContinuousEnrollment"] == 800
    assert run("features", "--extract-dir", ext, "--out", work) == 0
    matrix = work / "features/features.csv"
    assert run("train", "--matrix", matrix, "--seed", 4, "--out", work, "--epochs", 2,
               "--lambda-count", 4) == 0
    split = work / "models/split.json"
    n_test = json.loads(split.read_text())["n_test"]
    for name in ("lasso", "ann"):
        assert run("evaluate", "--model", work / f"models/{name}.json", "--matrix", matrix,
                   "--split", split, "--out", work) == 0
        assert json.loads((work / f"eval/{name}.json").read_text())["n"] == n_test
    capsys.readouterr()
    assert run("compare", work / "eval/lasso.json", work / "eval/ann.json", "--out", work / "cmp") == 0
    assert "delta (b - a)" in capsys.readouterr().out
    assert run("report", "--model", work / "models/lasso.json", "--matrix", matrix,
               "--out", work / "alert.csv", "--generated-at", "2014-04-01") == 0
    rows = list(csv.DictReader((work / "alert.csv").open()))
    assert len(rows) == 80 and rows[0]["generated_at"] == "2014-04-01"
    assert rows[0]["prediction_date"] == "2014-03-31"


def test_compare_identical_and_incomplete_reports(small_run, tmp_path, capsys):
    rep = small_run / "eval/lasso.json"
    comp, _ = pipeline.cmd_compare(rep, rep)
    assert all(v == 0 for v in comp["delta"].values())
    d = json.loads(rep.read_text())
    del d["pr_auc"]
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps(d))
    assert run("compare", rep, broken) != 0
    assert "pr_auc" in capsys.readouterr().err


def _matrix(n=100, seed=0):
    rng = np.random.default_rng(seed)
    reg = features.default_registry()
    X = rng.normal(size=(n, len(reg)))
    return features.FeatureMatrix([(f"P{i:03d}", date(2014, 3, 31)) for i in range(n)], reg, X,
                                  (rng.random(n) < 0.1).astype(int))


def test_report_size_and_order(tmp_path):
    fm = _matrix()
    mpath, _ = features.write_matrix(tmp_path / "m.csv", fm, PredictionContext(date(2014, 3, 31)))
    rng = np.random.default_rng(1)
    model = LinearModel(rng.normal(size=33), -2.0, 0.01, feature_names=fm.names)
    lasso.save_model(tmp_path / "lasso.json", model)
    out = pipeline.cmd_report(tmp_path / "lasso.json", mpath, tmp_path / "alert.csv")
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 10
    scores = [float(r["score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    # top features are the largest |weight x value| of that row
    i = int(rows[0]["patient_id"][1:])
    contrib = fm.values[i] * model.weights
    top = np.argsort(-np.abs(contrib), kind="stable")[:3]
    assert [rows[0][f"feature_{k}"] for k in (1, 2, 3)] == [fm.names[j] for j in top]
    assert float(rows[0]["value_1"]) == pytest.approx(contrib[top[0]])


def test_zero_weight_model_report():
    fm = _matrix()
    model = LinearModel(np.zeros(33), 0.0, 1.0, feature_names=fm.names)
    rows = pipeline.build_alert_rows(model, fm, None, "2014-03-31", "2014-03-31")
    assert [r[2] for r in rows] == [f"P{i:03d}" for i in range(10)]
    assert all(r[3] == "0.5" for r in rows)
    assert all(float(v) == 0.0 for r in rows for v in r[7::2])


def test_schema_mismatch_lists_names():
    fm = _matrix()
    names = fm.names.copy()
    names[0] = "sex"
    model = LinearModel(np.zeros(33), 0.0, 1.0, feature_names=names)
    with pytest.raises(pipeline.SchemaMismatch, match=r"model-only \['sex'\], matrix-only \['gender'\]"):
        pipeline.build_alert_rows(model, fm, None, "d", "d")
