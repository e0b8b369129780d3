"""Asthma case definitions and the cohort-selection funnel.

All look-back rules use the half-open window ``[as_of - 365d, as_of)``.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping

from .claims import MedClass, PatientTimeline, Setting

LOOKBACK_DAYS = 365
LABEL_DAYS = 91
AMR_HIGH_RISK_CUTOFF = 0.5


@dataclass(frozen=True)
class PredictionContext:
    prediction_date: date
    lookback_months: int = 12
    label_months: int = 3
    lag_days: int = 30
    max_gap_days: int = 45
    label_scope: str = "ed_or_ip"

    def __post_init__(self):
        if self.label_scope not in ("ed_only", "ed_or_ip"):
            raise ValueError(f"label_scope must be ed_only or ed_or_ip, got {self.label_scope!r}")

    @property
    def lookback_days(self) -> int:
        return LOOKBACK_DAYS if self.lookback_months == 12 else round(self.lookback_months * 365 / 12)

    @property
    def label_days(self) -> int:
        return LABEL_DAYS if self.label_months == 3 else round(self.label_months * 91 / 3)

    @property
    def lookback_start(self) -> date:
        return self.prediction_date - timedelta(days=self.lookback_days)

    @property
    def label_end(self) -> date:
        return self.prediction_date + timedelta(days=self.label_days)

    def check_study_window(self, study_start: date, study_end: date) -> None:
        if self.lookback_start < study_start or self.label_end > study_end:
            raise ValueError(
                f"prediction window {self.lookback_start}..{self.label_end} "
                f"exceeds study window {study_start}..{study_end}")


class Stage(str, enum.Enum):
    AGE_RANGE = "AgeRange"
    CSTE = "CSTE"
    CONTINUOUS_ENROLLMENT = "ContinuousEnrollment"


FUNNEL_ORDER = (Stage.AGE_RANGE, Stage.CSTE, Stage.CONTINUOUS_ENROLLMENT)


@dataclass(frozen=True)
class CohortDecision:
    patient_id: str
    eligible: bool
    failed_stages: tuple[Stage, ...] = ()


@dataclass(frozen=True)
class HedisThresholds:
    """Branch thresholds for persistent asthma; any branch suffices."""

    min_ed: int = 1
    min_inpatient: int = 1
    min_outpatient: int = 4
    min_fills_with_outpatient: int = 2
    min_fills: int = 4


def _in(d: date, start: date, end: date) -> bool:
    return start <= d < end


def _window(as_of: date) -> tuple[date, date]:
    return as_of - timedelta(days=LOOKBACK_DAYS), as_of


def amr(timeline: PatientTimeline, window: tuple[date, date]) -> float | None:
    """Asthma medication ratio over the half-open ``window``; None if no fills."""
    start, end = window
    if start > end:
        raise ValueError("window start after end")
    ctrl = rel = 0
    for f in timeline.fills:
        if _in(f.fill_date, start, end):
            if f.med_class is MedClass.CONTROLLER:
                ctrl += 1
            elif f.med_class is MedClass.RELIEVER:
                rel += 1
    if ctrl + rel == 0:
        return None
    return ctrl / (ctrl + rel)


def amr_flag(value: float | None) -> bool:
    """True marks high risk (AMR below 0.5). Undefined AMR is not flagged."""
    return value is not None and value < AMR_HIGH_RISK_CUTOFF


def _asthma_visit_counts(timeline: PatientTimeline, start: date, end: date) -> dict[Setting, int]:
    counts = {s: 0 for s in Setting}
    for c in timeline.claims:
        if c.primary_dx_asthma and _in(c.service_date, start, end):
            counts[c.setting] += 1
    return counts


def _fill_count(timeline: PatientTimeline, start: date, end: date) -> int:
    return sum(1 for f in timeline.fills if _in(f.fill_date, start, end))


def cste_probable_asthma(timeline: PatientTimeline, as_of: date) -> bool:
    start, end = _window(as_of)
    for c in timeline.claims:
        if c.primary_dx_asthma and _in(c.service_date, start, end):
            return True
    return any(_in(f.fill_date, start, end) for f in timeline.fills)


def hedis_persistent_asthma(timeline: PatientTimeline, as_of: date,
                            cfg: HedisThresholds = HedisThresholds()) -> bool:
    start, end = _window(as_of)
    visits = _asthma_visit_counts(timeline, start, end)
    fills = _fill_count(timeline, start, end)
    return (visits[Setting.ED] >= cfg.min_ed
            or visits[Setting.INPATIENT] >= cfg.min_inpatient
            or (visits[Setting.OUTPATIENT] >= cfg.min_outpatient
                and fills >= cfg.min_fills_with_outpatient)
            or fills >= cfg.min_fills)


def age_years(birth_date: date, on: date) -> float:
    return (on - birth_date).days / 365.25


def uncovered_runs(timeline: PatientTimeline, start: date, end: date) -> list[int]:
    """Lengths in days of each uncovered stretch of the closed range [start, end]."""
    runs = []
    cursor = start
    for s in timeline.enrollment:
        if s.end_date < cursor:
            continue
        if s.start_date > end:
            break
        if s.start_date > cursor:
            runs.append((s.start_date - cursor).days)
        cursor = s.end_date + timedelta(days=1)
        if cursor > end:
            break
    if cursor <= end:
        runs.append((end - cursor).days + 1)
    return runs


def continuously_enrolled(timeline: PatientTimeline, ctx: PredictionContext) -> bool:
    """No uncovered stretch longer than ``ctx.max_gap_days`` from look-back start
    (or birth, if later) through the end of the label window."""
    start = max(ctx.lookback_start, timeline.demographics.birth_date)
    runs = uncovered_runs(timeline, start, ctx.label_end)
    return all(r <= ctx.max_gap_days for r in runs)


@dataclass
class CohortResult:
    decisions: list[CohortDecision]
    funnel: dict[str, int] = field(default_factory=dict)

    @property
    def eligible_ids(self) -> list[str]:
        return [d.patient_id for d in self.decisions if d.eligible]


def decide(timeline: PatientTimeline, ctx: PredictionContext,
           age_bounds: tuple[float, float] = (0.5, 18.0)) -> CohortDecision:
    pid = timeline.patient_id
    age = age_years(timeline.demographics.birth_date, ctx.prediction_date)
    if not age_bounds[0] <= age <= age_bounds[1]:
        return CohortDecision(pid, False, (Stage.AGE_RANGE,))
    if not cste_probable_asthma(timeline, ctx.prediction_date):
        return CohortDecision(pid, False, (Stage.CSTE,))
    if not continuously_enrolled(timeline, ctx):
        return CohortDecision(pid, False, (Stage.CONTINUOUS_ENROLLMENT,))
    return CohortDecision(pid, True)


def select_cohort(timelines: Mapping[str, PatientTimeline], ctx: PredictionContext,
                  age_bounds: tuple[float, float] = (0.5, 18.0)) -> CohortResult:
    """Apply age, CSTE and enrollment stages in order.

    A patient is charged only to the first stage it fails. Decisions come
    back sorted by patient_id so the result does not depend on map order.
    """
    decisions = [decide(timelines[k], ctx, age_bounds) for k in sorted(timelines)]
    funnel = {"input": len(decisions)}
    alive = len(decisions)
    for stage in FUNNEL_ORDER:
        alive -= sum(1 for d in decisions if d.failed_stages and d.failed_stages[0] is stage)
        funnel[stage.value] = alive
    return CohortResult(decisions, funnel)


def write_funnel(path: str | Path, result: CohortResult) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result.funnel, indent=2) + "\n", encoding="utf-8")
    return path


def write_decisions(path: str | Path, decisions: Iterable[CohortDecision]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "eligible", "failed_stages"])
        for d in decisions:
            w.writerow([d.patient_id, int(d.eligible), ";".join(s.value for s in d.failed_stages)])
    return path
