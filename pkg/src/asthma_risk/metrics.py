"""ROC/PR areas, F1, risk tiers and the evaluation report.

Predicted positives are the High tier (top 10% of scores), not a fixed
probability cutoff. Accuracy is deliberately absent.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return s, y.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks: P(pos > neg) + P(tie)/2."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC AUC needs both classes")
    ranks = rankdata(s)  # average ranks for ties
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_groups(s, y):
    """Cumulative (tp, fp) after each distinct score, highest score first."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[s[1:] != s[:-1], True]  # end of each tie group
    return tp[last], fp[last]


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) points from (0, 0) to (1, 1), one per distinct score."""
    s, y = _check_binary(scores, labels)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC curve needs both classes")
    tp, fp = _threshold_groups(s, y)
    return [(0.0, 0.0)] + [(f / n_neg, t / n_pos) for t, f in zip(tp.tolist(), fp.tolist())]


def trapezoid_auc(points: Sequence[tuple[float, float]]) -> float:
    x = np.array([p[0] for p in points])
    yv = np.array([p[1] for p in points])
    return float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2))


def pr_curve(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) at each distinct score threshold, highest first."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("PR curve needs at least one positive")
    tp, fp = _threshold_groups(s, y)
    return [(t / n_pos, t / (t + f)) for t, f in zip(tp.tolist(), fp.tolist())]


def pr_auc(scores, labels) -> float:
    """Average precision: sum of recall increments times precision.

    Tied scores form one threshold, so the result does not depend on the
    order of tied rows.
    """
    pts = pr_curve(scores, labels)
    total, prev_r = 0.0, 0.0
    for r, p in pts:
        total += (r - prev_r) * p
        prev_r = r
    return float(total)


def f1(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class Tier(str, enum.Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"


@dataclass(frozen=True)
class TierAssignment:
    patient_id: str
    score: float
    tier: Tier
    rank: int


def tier_sizes(n: int) -> tuple[int, int, int]:
    """(High, Medium, Low) counts: ceil(n/10), ceil(n/5) - ceil(n/10), rest."""
    # integer ceilings; 0.1 * n in floating point overshoots for e.g. n = 30
    high = -(-n // 10)
    top20 = -(-n // 5)
    return high, top20 - high, n - top20


def _ranking(scores, ids) -> np.ndarray:
    s = np.asarray(scores, dtype=float)
    if ids is None:
        ids = [f"{i:012d}" for i in range(len(s))]
    ids = np.asarray(ids, dtype=str)
    # lexsort keys run last-to-first: primary is -score, secondary patient_id
    return np.lexsort((ids, -s)), ids


def assign_tiers(scores, patient_ids: Sequence[str] | None = None) -> list[TierAssignment]:
    """Rank by (score desc, patient_id asc) and cut at the 10% / 20% marks.

    Returned in rank order.
    """
    s = np.asarray(scores, dtype=float)
    if len(s) < 1:
        raise ValueError("need at least one score")
    order, ids = _ranking(s, patient_ids)
    high, medium, _ = tier_sizes(len(s))
    out = []
    for rank, i in enumerate(order, start=1):
        tier = Tier.HIGH if rank <= high else Tier.MEDIUM if rank <= high + medium else Tier.LOW
        out.append(TierAssignment(str(ids[i]), float(s[i]), tier, rank))
    return out


@dataclass
class EvalReport:
    roc_auc: float
    pr_auc: float
    recall: float
    precision: float
    f1: float
    confusion: dict
    prevalence: float
    n: int
    roc_points: list = field(default_factory=list)
    pr_points: list = field(default_factory=list)
    row_keys_sha256: str = ""
    model: str = ""

    METRICS = ("roc_auc", "recall", "precision", "f1", "pr_auc")

    def to_dict(self, with_curves: bool = False) -> dict:
        d = asdict(self)
        if not with_curves:
            d.pop("roc_points")
            d.pop("pr_points")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        missing = [k for k in (*cls.METRICS, "confusion", "prevalence", "n") if k not in d]
        if missing:
            raise ValueError(f"evaluation report missing fields: {missing}")
        fields = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**fields)


def row_keys_digest(keys) -> str:
    h = hashlib.sha256()
    for k in keys:
        h.update(str(k).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def evaluate(scores, labels, patient_ids: Sequence[str] | None = None, model: str = "") -> EvalReport:
    """Full metric bundle with the High tier as the predicted-positive set."""
    s, y = _check_binary(scores, labels)
    order, ids = _ranking(s, patient_ids)
    high, _, _ = tier_sizes(len(s))
    predicted = np.zeros(len(s), dtype=bool)
    predicted[order[:high]] = True
    tp = int(np.sum(predicted & (y == 1)))
    fp = int(np.sum(predicted & (y == 0)))
    fn = int(np.sum(~predicted & (y == 1)))
    tn = int(np.sum(~predicted & (y == 0)))
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    return EvalReport(
        roc_auc=roc_auc(s, y), pr_auc=pr_auc(s, y), recall=recall, precision=precision,
        f1=f1(precision, recall), confusion={"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        prevalence=float(y.mean()), n=len(y), roc_points=roc_curve(s, y), pr_points=pr_curve(s, y),
        row_keys_sha256=row_keys_digest(sorted(ids.tolist())), model=model,
    )


def write_report(path: str | Path, report: EvalReport) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return path


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_curve(path: str | Path, points, header: tuple[str, str]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for a, b in points:
            w.writerow(["%.17g" % a, "%.17g" % b])
    return path


def compare(a: EvalReport, b: EvalReport) -> dict:
    """Side-by-side metrics for two reports over the same test rows."""
    if a.row_keys_sha256 != b.row_keys_sha256 or a.n != b.n:
        raise ValueError("reports cover different test rows")
    rows = {}
    for r, name in ((a, a.model or "model_a"), (b, b.model or "model_b")):
        rows[name] = {m: getattr(r, m) for m in EvalReport.METRICS}
    delta = {m: getattr(b, m) - getattr(a, m) for m in EvalReport.METRICS}
    return {"models": rows, "delta": delta}


_HEADERS = {"roc_auc": "ROC AUC", "recall": "Recall", "precision": "Precision",
            "f1": "F1 score", "pr_auc": "PR AUC"}


def render_table(comparison: dict, digits: int = 3) -> str:
    """Plain-text table: one row per model, columns in the reporting order, plus deltas."""
    names = list(comparison["models"])
    cols = EvalReport.METRICS
    label_w = max(len("Models"), len("delta (b - a)"), *(len(n) for n in names))
    widths = [max(len(_HEADERS[c]), digits + 3) for c in cols]

    def line(label, vals):
        cells = [v.rjust(w) for v, w in zip(vals, widths)]
        return f"{label.ljust(label_w)} | " + "  ".join(cells)

    out = [line("Models", [_HEADERS[c] for c in cols])]
    out.append("-" * len(out[0]))
    for n in names:
        out.append(line(n, [f"{comparison['models'][n][c]:.{digits}f}" for c in cols]))
    out.append(line("delta (b - a)", [f"{comparison['delta'][c]:+.{digits}f}" for c in cols]))
    return "\n".join(out) + "\n"
