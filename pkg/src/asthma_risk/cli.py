"""Command-line entry point: ``asthma-risk <subcommand> ...``.

Every run-config key can come from ``--config run.ini`` (a ``[run]`` section
of ``key = value`` lines) and be overridden by the matching ``--key`` flag.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import claims, features, lasso, metrics, pipeline, synth
from .pipeline import RunConfig, RunContext, load_config


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="INI file with a [run] section")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "out_dir":
            parent.add_argument(flag, "--out", dest=f.name, default=None, help="output directory")
        else:
            parent.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())
    return parent


def _cfg(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(RunConfig)}
    return load_config(args.config, overrides)


def _extract_dir(cfg: RunConfig) -> Path:
    if not cfg.extract_dir:
        raise ValueError("--extract-dir is required")
    p = Path(cfg.extract_dir)
    if not p.exists():
        raise FileNotFoundError(f"extract directory not found: {p}")
    return p


def cmd_synth(args) -> int:
    cfg = _cfg(args)
    cfg.require_seed()
    res = synth.generate(cfg.synth_config(), cfg.out_dir)
    for p in res.paths.values():
        print(p)
    return 0


def _timelines(cfg: RunConfig, ctx: RunContext):
    return pipeline.stage_ingest(cfg, ctx, _extract_dir(cfg))


def cmd_ingest(args) -> int:
    cfg = _cfg(args)
    ctx = RunContext(cfg.out_dir)
    _timelines(cfg, ctx)
    print((ctx.root / "ingest/summary.json").read_text(), end="")
    return 0


def cmd_cohort(args) -> int:
    cfg = _cfg(args)
    ctx = RunContext(cfg.out_dir)
    result = pipeline.stage_cohort(cfg, ctx, _timelines(cfg, ctx))
    print(json.dumps(result.funnel, indent=2))
    return 0


def cmd_features(args) -> int:
    cfg = _cfg(args)
    ctx = RunContext(cfg.out_dir)
    tl = _timelines(cfg, ctx)
    co = pipeline.stage_cohort(cfg, ctx, tl)
    fm = pipeline.stage_features(cfg, ctx, tl, co.eligible_ids)
    print(f"{len(fm)} rows x {len(fm.columns)} features, prevalence {fm.prevalence:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _cfg(args)
    cfg.require_seed()
    fm = features.read_matrix(args.matrix)
    ctx = RunContext(cfg.out_dir)
    trained = pipeline.stage_train(cfg, ctx, fm)
    for name in trained["models"]:
        print(ctx.root / f"models/{name}.json")
    return 0


def cmd_evaluate(args) -> int:
    model, scaler = pipeline.load_model(args.model)
    fm = features.read_matrix(args.matrix)
    if args.split:
        test_ids = set(json.loads(Path(args.split).read_text(encoding="utf-8"))["test_ids"])
        fm = fm.take([i for i, k in enumerate(fm.row_keys) if k[0] in test_ids])
    if scaler is not None:
        fm = features.apply_scaler(fm, scaler)
    name = args.name or ("lasso" if isinstance(model, lasso.LinearModel) else "ann")
    ctx = RunContext(args.out)
    report = pipeline.stage_evaluate(ctx, name, model, fm)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_report(args) -> int:
    out = pipeline.cmd_report(args.model, args.matrix, args.out, args.prediction_date, args.generated_at)
    print(out)
    return 0


def cmd_compare(args) -> int:
    _, table = pipeline.cmd_compare(args.report_a, args.report_b, args.out)
    print(table, end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _cfg(args)
    res = pipeline.cmd_pipeline(cfg)
    print(json.dumps(res.funnel, indent=2))
    if res.comparison is not None:
        print(metrics.render_table(res.comparison), end="")
    else:
        for name, r in res.reports.items():
            print(f"{name}: ROC AUC {r.roc_auc:.3f}  PR AUC {r.pr_auc:.3f}")
    if res.bayes_auc is not None:
        print(f"generator Bayes AUC (test rows): {res.bayes_auc:.3f}")
    print(f"manifest: {res.manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = argparse.ArgumentParser(prog="asthma-risk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[parent], help="write a synthetic extract").set_defaults(func=cmd_synth)
    sub.add_parser("ingest", parents=[parent], help="parse an extract, write rejects").set_defaults(func=cmd_ingest)
    sub.add_parser("cohort", parents=[parent], help="apply the cohort funnel").set_defaults(func=cmd_cohort)
    sub.add_parser("features", parents=[parent], help="build the feature matrix").set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[parent], help="split, scale and fit models")
    p.add_argument("--matrix", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a model on (the test rows of) a matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--split", help="split.json from train; restricts to test rows")
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="High-tier alert report")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prediction-date")
    p.add_argument("--generated-at")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="side-by-side metrics of two evaluation reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    sub.add_parser("pipeline", parents=[parent], help="run every stage").set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (claims.ExtractError, FileNotFoundError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
