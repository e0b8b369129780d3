"""End-to-end orchestration: extract -> cohort -> features -> models -> evaluation -> alerts.

Every file a run writes goes through :class:`RunContext`, which hashes it into
``manifest.json`` and, if a stage fails, renames what was written to
``<name>.partial``.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import claims, cohort, features, lasso, metrics, mlp, synth

log = logging.getLogger(__name__)

MODEL_CHOICES = ("lasso", "ann", "both")


@dataclass
class RunConfig:
    """Everything that determines a run's outputs. No wall-clock defaults."""

    out_dir: str = "run"
    seed: int | None = None
    extract_dir: str | None = None  # None -> generate a synthetic extract
    code_map: str | None = None
    n_patients: int = 28378
    target_prevalence: float = 0.03
    signal_strength: float = 1.0
    decoy_fraction: float = 0.2
    study_start: str = "2012-07-01"
    study_end: str = "2014-06-30"
    prediction_date: str | None = None  # None -> study_end - 91 days
    label_scope: str = "ed_or_ip"
    max_gap_days: int = 45
    lag_days: int = 30
    age_min: float = 0.5
    age_max: float = 18.0
    models: str = "both"
    resampling: str = "None"
    train_fraction: float = 0.7
    split_seed: int | None = None
    mlp_seed: int | None = None
    lambda_count: int = 20
    lambda_ratio: float = 1e-3
    val_fraction: float = 0.2
    hidden_sizes: str = "32,16"
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.01
    dropout_rate: float = 0.5
    leaky_alpha: float = 0.1
    generated_at: str | None = None  # None -> prediction date

    def __post_init__(self):
        if self.models not in MODEL_CHOICES:
            raise ValueError(f"models must be one of {MODEL_CHOICES}, got {self.models!r}")
        features.Resampling(self.resampling)
        if self.label_scope not in ("ed_only", "ed_or_ip"):
            raise ValueError("label_scope must be ed_only or ed_or_ip")

    @property
    def study_window(self) -> tuple[date, date]:
        return date.fromisoformat(self.study_start), date.fromisoformat(self.study_end)

    @property
    def as_of(self) -> date:
        if self.prediction_date:
            return date.fromisoformat(self.prediction_date)
        return self.study_window[1] - timedelta(days=cohort.LABEL_DAYS)

    @property
    def model_names(self) -> list[str]:
        return ["lasso", "ann"] if self.models == "both" else [self.models]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ValueError("a seed is required (--seed or 'seed' in the config file)")
        return self.seed

    def synth_config(self) -> synth.SynthConfig:
        start, end = self.study_window
        return synth.SynthConfig(
            n_patients=self.n_patients, study_start=start, study_end=end,
            target_prevalence=self.target_prevalence, seed=self.require_seed(),
            signal_strength=self.signal_strength, age_range=(self.age_min, self.age_max),
            decoy_fraction=self.decoy_fraction,
            prediction_date=date.fromisoformat(self.prediction_date) if self.prediction_date else None)

    def context(self) -> cohort.PredictionContext:
        return cohort.PredictionContext(self.as_of, lag_days=self.lag_days,
                                        max_gap_days=self.max_gap_days, label_scope=self.label_scope)

    def mlp_config(self) -> mlp.MlpConfig:
        seed = self.mlp_seed if self.mlp_seed is not None else self.require_seed()
        return mlp.MlpConfig(
            hidden_sizes=tuple(int(h) for h in str(self.hidden_sizes).split(",") if h.strip()),
            leaky_alpha=self.leaky_alpha, dropout_rate=self.dropout_rate,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, seed=seed)

    def split_plan(self) -> features.SplitPlan:
        seed = self.split_seed if self.split_seed is not None else self.require_seed()
        return features.SplitPlan(seed, self.train_fraction, features.Resampling(self.resampling))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")  # two runs differing only in location share a config hash
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _convert(name: str, raw: Any) -> Any:
    ftype = {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]
    if raw is None or not isinstance(raw, str):
        return raw
    if raw.strip().lower() in ("", "none", "null") and "None" in ftype:
        return None
    if ftype.startswith("int"):
        return int(raw)
    if ftype.startswith("float"):
        return float(raw)
    return raw


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read an INI-style ``[run]`` section, then apply non-None overrides."""
    values: dict[str, Any] = {}
    known = {f.name for f in dataclasses.fields(RunConfig)}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        parser.read(p, encoding="utf-8")
        if not parser.has_section("run"):
            raise ValueError(f"{p}: expected a [run] section")
        for key, raw in parser.items("run"):
            if key not in known:
                raise ValueError(f"{p}: unknown config key {key!r}")
            values[key] = _convert(key, raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _convert(key, val)
    return RunConfig(**values)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunContext:
    """Tracks every artifact written under ``root``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, *paths: Path) -> None:
        for p in paths:
            p = Path(p)
            if p not in self.written:
                self.written.append(p)

    def mark_partial(self) -> list[Path]:
        moved = []
        for p in self.written:
            if p.exists():
                target = p.with_name(p.name + ".partial")
                p.replace(target)
                moved.append(target)
        return moved

    def write_manifest(self, cfg: RunConfig) -> Path:
        entries = [{"path": p.relative_to(self.root).as_posix(), "sha256": sha256_file(p)}
                   for p in sorted(self.written, key=lambda q: q.relative_to(self.root).as_posix())]
        cfg_dict = cfg.to_dict()
        cfg_dict.pop("out_dir")
        manifest = {
            "config": cfg_dict,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "artifacts": entries,
        }
        p = self.root / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    return path


# -------------------------------------------------------------------- stages

def stage_synth(cfg: RunConfig, ctx: RunContext, subdir: str = "extract") -> Path:
    res = synth.generate(cfg.synth_config(), ctx.path(subdir))
    return _record_extract(ctx, res.paths)


def _record_extract(ctx: RunContext, paths: Mapping[str, Path]) -> Path:
    ctx.record(*paths.values())
    return Path(next(iter(paths.values()))).parent


def stage_ingest(cfg: RunConfig, ctx: RunContext, extract_dir: Path):
    code_map = claims.CodeMap.load(cfg.code_map) if cfg.code_map else None
    ext = claims.parse_extract(extract_dir, code_map, cfg.study_window)
    timelines, orphans = claims.build_timelines(ext)
    rejects = ext.rejects + orphans
    ctx.record(claims.write_rejects(ctx.path("ingest/rejects.csv"), rejects))
    summary = {"row_counts": ext.row_counts, "rejects": len(rejects), "patients": len(timelines),
               "claims": sum(len(t.claims) for t in timelines.values()),
               "fills": sum(len(t.fills) for t in timelines.values())}
    ctx.record(write_json(ctx.path("ingest/summary.json"), summary))
    log.info("ingested %d patients, %d rejects", len(timelines), len(rejects))
    return timelines


def stage_cohort(cfg: RunConfig, ctx: RunContext, timelines) -> cohort.CohortResult:
    pctx = cfg.context()
    pctx.check_study_window(*cfg.study_window)
    result = cohort.select_cohort(timelines, pctx, (cfg.age_min, cfg.age_max))
    ctx.record(cohort.write_funnel(ctx.path("cohort/funnel.json"), result),
               cohort.write_decisions(ctx.path("cohort/decisions.csv"), result.decisions))
    log.info("cohort funnel %s", result.funnel)
    return result


def stage_features(cfg: RunConfig, ctx: RunContext, timelines, eligible) -> features.FeatureMatrix:
    registry = features.default_registry()
    bad = features.validate_registry(registry, cfg.lag_days)
    if bad:
        raise ValueError("feature registry violates the claims-lag window rule: " + "; ".join(bad))
    pctx = cfg.context()
    fm = features.extract(timelines, eligible, pctx, registry)
    ctx.record(*features.write_matrix(ctx.path("features/features.csv"), fm, pctx))
    return fm


def stage_train(cfg: RunConfig, ctx: RunContext, fm: features.FeatureMatrix) -> dict:
    """Split, scale, fit the selected models; returns test matrix and models by name."""
    plan = cfg.split_plan()
    train, test = features.split_and_resample(fm, plan)
    scaler = features.fit_scaler(train)
    train_s = features.apply_scaler(train, scaler)
    test_s = features.apply_scaler(test, scaler)
    split = {"seed": plan.seed, "train_fraction": plan.train_fraction,
             "resampling": plan.resampling.value, "n_train": len(train), "n_test": len(test),
             "test_ids": [k[0] for k in test.row_keys]}
    ctx.record(write_json(ctx.path("models/split.json"), split))
    models = {}
    meta = {"split_seed": plan.seed, "resampling": plan.resampling.value, "n_train": len(train)}
    if "lasso" in cfg.model_names:
        lcfg = lasso.LassoConfig(lambda_grid=list(lasso.lambda_grid(
            train_s.values, train_s.labels, cfg.lambda_count, cfg.lambda_ratio)))
        lam = lasso.select_lambda(train_s.values, train_s.labels, lcfg, cfg.val_fraction, plan.seed)
        model = lasso.fit_lasso(train_s.values, train_s.labels, lam, lcfg, feature_names=fm.names)
        ctx.record(lasso.save_model(ctx.path("models/lasso.json"), model, scaler,
                                    {**meta, "lambda_grid": list(lcfg.lambda_grid)}))
        models["lasso"] = model
    if "ann" in cfg.model_names:
        mcfg = cfg.mlp_config()
        model = mlp.train(train_s.values, train_s.labels, mcfg, feature_names=fm.names)
        ctx.record(mlp.save_model(ctx.path("models/ann.json"), model, scaler, meta))
        models["ann"] = model
    return {"test": test_s, "models": models, "scaler": scaler}


def score(model, X) -> np.ndarray:
    if isinstance(model, lasso.LinearModel):
        return lasso.predict_proba(model, X)
    return mlp.predict_proba(model, X)


def stage_evaluate(ctx: RunContext, name: str, model, test: features.FeatureMatrix) -> metrics.EvalReport:
    s = score(model, test.values)
    report = metrics.evaluate(s, test.labels, [k[0] for k in test.row_keys], model=name)
    ctx.record(metrics.write_report(ctx.path(f"eval/{name}.json"), report),
               metrics.write_curve(ctx.path(f"eval/{name}_roc.csv"), report.roc_points, ("fpr", "tpr")),
               metrics.write_curve(ctx.path(f"eval/{name}_pr.csv"), report.pr_points, ("recall", "precision")))
    return report


def stage_compare(ctx: RunContext, a: metrics.EvalReport, b: metrics.EvalReport) -> dict:
    comp = metrics.compare(a, b)
    ctx.record(write_json(ctx.path("eval/comparison.json"), comp))
    p = ctx.path("eval/comparison.txt")
    p.write_text(metrics.render_table(comp), encoding="utf-8")
    ctx.record(p)
    return comp


# ------------------------------------------------------------ alert reports

ALERT_COLUMNS = ("generated_at", "prediction_date", "patient_id", "score", "tier", "rank",
                 "feature_1", "value_1", "feature_2", "value_2", "feature_3", "value_3")


class SchemaMismatch(ValueError):
    pass


def load_model(path: str | Path):
    """Returns (model, scaler) from a model JSON of either family."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    d = json.loads(path.read_text(encoding="utf-8"))
    scaler = features.Scaler.from_dict(d["scaler"]) if d.get("scaler") else None
    if d.get("kind") == "lasso":
        return lasso.LinearModel.from_dict(d), scaler
    if d.get("kind") == "ann":
        return mlp.MlpModel.from_dict(d), scaler
    raise ValueError(f"{path}: unknown model kind {d.get('kind')!r}")


def contributions(model, Z: np.ndarray) -> np.ndarray:
    """Per-row, per-feature attribution used to pick the top features.

    Linear: weight times standardized value. Network: gradient of the
    output logit with respect to each standardized input.
    """
    if isinstance(model, lasso.LinearModel):
        return Z * model.weights
    return mlp.input_gradient(model, Z)


def build_alert_rows(model, matrix: features.FeatureMatrix, scaler, prediction_date: str,
                     generated_at: str) -> list[list]:
    names = getattr(model, "feature_names", None)
    if names is not None and list(names) != matrix.names:
        only_model = [n for n in names if n not in matrix.names]
        only_matrix = [n for n in matrix.names if n not in names]
        raise SchemaMismatch(
            f"feature names differ: model-only {only_model}, matrix-only {only_matrix}"
            + ("" if only_model or only_matrix else " (same names, different order)"))
    scaled = features.apply_scaler(matrix, scaler) if scaler is not None else matrix
    Z = scaled.values
    s = score(model, Z)
    ids = [k[0] for k in matrix.row_keys]
    tiers = metrics.assign_tiers(s, ids)
    pos = {pid: i for i, pid in enumerate(ids)}
    contrib = contributions(model, Z)
    rows = []
    for t in tiers:
        if t.tier is not metrics.Tier.HIGH:
            break
        i = pos[t.patient_id]
        c = contrib[i]
        top = np.argsort(-np.abs(c), kind="stable")[:3]
        row = [generated_at, prediction_date, t.patient_id, "%.17g" % t.score, t.tier.value, t.rank]
        for j in top:
            row += [matrix.names[j], "%.17g" % (c[j] + 0.0)]
        rows.append(row)
    return rows


def write_alert_report(path: Path, rows) -> Path:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALERT_COLUMNS)
        w.writerows(rows)
    return Path(path)


def cmd_report(model_path, matrix_path, out_path, prediction_date: str | None = None,
               generated_at: str | None = None) -> Path:
    model, scaler = load_model(model_path)
    fm = features.read_matrix(matrix_path)
    pd_ = prediction_date or (fm.row_keys[0][1].isoformat() if len(fm) else "")
    rows = build_alert_rows(model, fm, scaler, pd_, generated_at or pd_)
    return write_alert_report(Path(out_path), rows)


def cmd_compare(report_a, report_b, out_dir=None) -> tuple[dict, str]:
    a = metrics.read_report(report_a)
    b = metrics.read_report(report_b)
    comp = metrics.compare(a, b)
    table = metrics.render_table(comp)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "comparison.json", comp)
        (out / "comparison.txt").write_text(table, encoding="utf-8")
    return comp, table


# ------------------------------------------------------------------ pipeline

@dataclass
class PipelineResult:
    out_dir: Path
    funnel: dict
    reports: dict = field(default_factory=dict)
    comparison: dict | None = None
    bayes_auc: float | None = None
    manifest: Path | None = None


def cmd_pipeline(cfg: RunConfig) -> PipelineResult:
    """Run every stage into ``cfg.out_dir`` and write the manifest last."""
    cfg.require_seed()
    ctx = RunContext(cfg.out_dir)
    try:
        if cfg.extract_dir:
            extract_dir = Path(cfg.extract_dir)
            if not extract_dir.exists():
                raise FileNotFoundError(f"extract directory not found: {extract_dir}")
            gt_path = None
        else:
            extract_dir = stage_synth(cfg, ctx)
            gt_path = extract_dir / "ground_truth.csv"
        timelines = stage_ingest(cfg, ctx, extract_dir)
        co = stage_cohort(cfg, ctx, timelines)
        fm = stage_features(cfg, ctx, timelines, co.eligible_ids)
        trained = stage_train(cfg, ctx, fm)
        reports = {name: stage_evaluate(ctx, name, m, trained["test"])
                   for name, m in trained["models"].items()}
        comparison = None
        if len(reports) == 2:
            comparison = stage_compare(ctx, reports["lasso"], reports["ann"])
        pd_ = cfg.as_of.isoformat()
        for name, m in trained["models"].items():
            rows = build_alert_rows(m, fm, trained["scaler"], pd_, cfg.generated_at or pd_)
            ctx.record(write_alert_report(ctx.path(f"reports/alert_{name}.csv"), rows))
        bayes = None
        if gt_path is not None:
            gt = synth.read_ground_truth(gt_path)
            test_ids = [k[0] for k in trained["test"].row_keys]
            bayes = synth.bayes_auc(gt, test_ids)
            ctx.record(write_json(ctx.path("eval/generator_bayes.json"),
                                  {"cohort": synth.bayes_auc(gt, co.eligible_ids), "test": bayes}))
        manifest = ctx.write_manifest(cfg)
    except BaseException:
        ctx.mark_partial()
        raise
    return PipelineResult(ctx.root, co.funnel, reports, comparison, bayes, manifest)
