"""Seeded synthetic claims extracts with a planted latent-severity signal.

Each patient gets a latent severity and medication adherence. Monthly
Bernoulli draws produce visits and fills whose rates rise with severity and
poor control; the 3-month outcome probability is a logistic function of the
same latents, calibrated so the cohort prevalence hits the target. A share
of decoy patients fails exactly one cohort stage so the funnel has work to
do.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .claims import FILE_NAMES, SCHEMA
from .metrics import roc_auc

LOOKBACK_DAYS = 365
LABEL_DAYS = 91
BIN_DAYS = 364 / 12

GROUND_TRUTH_COLUMNS = ("patient_id", "severity", "true_prob", "label")

# (name, setting, asthma-primary) for claim-generating event types
_CLAIM_KINDS = {
    "asthma_ed": ("ED", True),
    "asthma_ip": ("Inpatient", True),
    "asthma_op": ("Outpatient", True),
    "other_ed": ("ED", False),
    "other_ip": ("Inpatient", False),
    "other_op": ("Outpatient", False),
}
_FILL_KINDS = {
    "controller": "Controller",
    "reliever": "Reliever",
    "ocs": "OralCorticosteroid",
    "other_asthma": "OtherAsthma",
}
# comorbidity -> (base probability, slope in severity)
_COMORBIDITY_RATES = {
    "Obesity": (0.10, 0.15),
    "SleepApnea": (0.02, 0.08),
    "AllergicRhinitis": (0.15, 0.25),
    "AtopicDermatitis": (0.08, 0.15),
    "GERD": (0.03, 0.08),
    "AnxietyDepression": (0.03, 0.10),
}
DECOY_KINDS = ("age", "cste", "enrollment")


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 28378
    study_start: date = date(2012, 7, 1)
    study_end: date = date(2014, 6, 30)
    target_prevalence: float = 0.03
    seed: int = 7
    signal_strength: float = 1.0
    age_range: tuple[float, float] = (0.5, 18.0)
    decoy_fraction: float = 0.2
    prediction_date: date | None = None

    def __post_init__(self):
        if not 0 < self.target_prevalence < 1:
            raise ValueError("target_prevalence must lie strictly between 0 and 1")
        if self.n_patients < 1:
            raise ValueError("n_patients must be positive")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be non-negative")
        if not 0 <= self.decoy_fraction < 1:
            raise ValueError("decoy_fraction must lie in [0, 1)")
        span = (self.study_end - self.study_start).days + 1
        if span < LOOKBACK_DAYS + LABEL_DAYS:
            raise ValueError(
                f"study window of {span} days is too short: need at least "
                f"{LOOKBACK_DAYS + LABEL_DAYS} days (12-month lookback + 3-month label window)")
        pd_ = self.as_of
        if pd_ - timedelta(days=LOOKBACK_DAYS) < self.study_start or \
                pd_ + timedelta(days=LABEL_DAYS) > self.study_end:
            raise ValueError(f"prediction date {pd_} leaves no room for lookback/label windows")

    @property
    def as_of(self) -> date:
        """Prediction date; defaults to the last date with a full label window."""
        if self.prediction_date is not None:
            return self.prediction_date
        return self.study_end - timedelta(days=LABEL_DAYS)

    @property
    def n_decoys(self) -> int:
        f = self.decoy_fraction
        return int(round(self.n_patients * f / (1 - f)))


@dataclass
class SynthResult:
    paths: dict[str, Path]
    patient_ids: list[str]
    eligible_ids: list[str]
    severity: np.ndarray
    adherence: np.ndarray
    true_prob: np.ndarray
    labels: np.ndarray
    decoy_kind: list[str]


def _logit(p):
    return np.log(p / (1 - p))


def _calibrate_intercept(z: np.ndarray, target: float) -> float:
    """Intercept b with mean(sigmoid(b + z)) == target (bisection)."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.mean(1.0 / (1.0 + np.exp(-(mid + z)))) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def event_rates(severity, adherence) -> dict[str, np.ndarray]:
    """Monthly event probabilities per patient.

    Everything rises with severity; adherence moves fills from reliever to
    controller and lowers acute use, which is what makes low AMR a risk
    marker.
    """
    s = np.asarray(severity, float)
    a = np.asarray(adherence, float)
    u = s * (1.4 - 0.8 * a)  # poor control
    return {
        "asthma_ed": 0.004 + 0.10 * u,
        "asthma_ip": 0.001 + 0.025 * u,
        "asthma_op": 0.04 + 0.30 * s,
        "other_ed": np.full_like(s, 0.02),
        "other_ip": np.full_like(s, 0.003),
        "other_op": np.full_like(s, 0.12),
        "controller": np.minimum(0.9, 0.04 + 0.8 * a * (0.2 + s)),
        "reliever": 0.04 + 0.45 * u,
        "ocs": 0.004 + 0.07 * u,
        "other_asthma": np.full_like(s, 0.01),
    }


def risk_score(severity, adherence, age_years) -> np.ndarray:
    """Signal part of the outcome logit (before strength scaling and intercept)."""
    s = np.asarray(severity, float)
    a = np.asarray(adherence, float)
    u = s * (1.4 - 0.8 * a)
    young = (np.asarray(age_years, float) < 5).astype(float)
    return 10.0 * u + 0.4 * young


def _bin_days(rng, n, k_bins, first_offset, bin_len):
    """Random day offsets for each (patient, bin) cell, bins going backwards."""
    k = np.arange(k_bins)
    frac = rng.random((n, k_bins))
    return -(first_offset + np.floor((k + frac) * bin_len)).astype(np.int64)


def generate(cfg: SynthConfig, out_dir: str | Path | None = None) -> SynthResult:
    """Draw a full extract; write the four CSVs and ground_truth.csv if ``out_dir``."""
    rng = np.random.default_rng(cfg.seed)
    n_elig, n_decoy = cfg.n_patients, cfg.n_decoys
    N = n_elig + n_decoy
    pd_ = cfg.as_of
    start_off = (cfg.study_start - pd_).days  # negative
    end_off = (cfg.study_end - pd_).days

    is_decoy = np.zeros(N, bool)
    is_decoy[rng.permutation(N)[:n_decoy]] = True
    decoy_kind = np.array([""] * N, dtype=object)
    decoy_kind[is_decoy] = rng.choice(DECOY_KINDS, size=n_decoy)

    severity = rng.beta(2.0, 3.0, N)
    adherence = rng.beta(2.5, 2.0, N)

    lo, hi = cfg.age_range
    min_days = int(np.ceil(lo * 365.25))
    max_days = int(np.floor(hi * 365.25))
    age_days = rng.integers(min_days, max_days + 1, N)
    bad_age = decoy_kind == "age"
    young_side = rng.random(N) < 0.5
    age_days = np.where(bad_age & young_side, rng.integers(15, min_days - 5, N), age_days)
    age_days = np.where(bad_age & ~young_side, rng.integers(max_days + 30, max_days + 500, N), age_days)
    birth_off = -age_days  # day offset of birth relative to prediction date
    gender = rng.choice(np.array(["M", "F", "Unknown"]), size=N, p=[0.55, 0.445, 0.005])

    z = cfg.signal_strength * risk_score(severity, adherence, age_days / 365.25)
    b0 = _calibrate_intercept(z[~is_decoy], cfg.target_prevalence)
    true_prob = 1.0 / (1.0 + np.exp(-(b0 + z)))
    labels = (rng.random(N) < true_prob).astype(np.int64)

    # history bins: 12 inside the look-back year, then monthly back to study start
    n_old = int(np.ceil((-start_off - LOOKBACK_DAYS) / 30.4)) if -start_off > LOOKBACK_DAYS else 0
    rates = event_rates(severity, adherence)

    ev_pid, ev_day, ev_kind = [], [], []

    def emit(kind, mask_rows, days):
        r, c = np.nonzero(mask_rows)
        ev_pid.append(r)
        ev_day.append(days[r, c])
        ev_kind.append(np.full(len(r), kind, dtype=object))

    label_kinds_blocked = {"asthma_ed", "asthma_ip"}
    for kind in (*_CLAIM_KINDS, *_FILL_KINDS):
        p = rates[kind][:, None]
        recent_days = _bin_days(rng, N, 12, 1, BIN_DAYS)
        emit(kind, rng.random((N, 12)) < p, recent_days)
        if n_old:
            old_days = _bin_days(rng, N, n_old, LOOKBACK_DAYS, 30.4)
            emit(kind, rng.random((N, n_old)) < p, old_days)
        # label window: acute asthma events come only from the outcome draw
        future_days = (1 + np.floor((np.arange(3) + rng.random((N, 3))) * LABEL_DAYS / 3)).astype(np.int64)
        hits = rng.random((N, 3)) < p
        if kind not in label_kinds_blocked:
            emit(kind, hits, future_days)

    # outcome events
    pos = np.nonzero(labels == 1)[0]
    out_day = rng.integers(1, LABEL_DAYS + 1, len(pos))
    out_kind = np.where(rng.random(len(pos)) < 0.85, "asthma_ed", "asthma_ip").astype(object)
    ev_pid.append(pos)
    ev_day.append(out_day)
    ev_kind.append(out_kind)

    # comorbidity codes ride on dedicated outpatient claims inside the look-back year
    comorb_pid, comorb_day, comorb_code = [], [], []
    for code, (base, slope) in _COMORBIDITY_RATES.items():
        has = np.nonzero(rng.random(N) < base + slope * severity)[0]
        comorb_pid.append(has)
        comorb_day.append(-rng.integers(1, LOOKBACK_DAYS, len(has)))
        comorb_code.append(np.full(len(has), code, dtype=object))

    pid = np.concatenate(ev_pid + comorb_pid)
    day = np.concatenate(ev_day + comorb_day).astype(np.int64)
    kind = np.concatenate(ev_kind + [np.full(len(x), "comorb_op", dtype=object) for x in comorb_pid])
    code = np.concatenate([np.full(len(x), "", dtype=object) for x in ev_pid] + comorb_code)

    # CSTE decoys lose every asthma event in [as_of - 365, as_of)
    asthma_kind = np.isin(kind, ["asthma_ed", "asthma_ip", "asthma_op", *_FILL_KINDS])
    in_cste = (day >= -LOOKBACK_DAYS) & (day <= -1)
    keep = ~((decoy_kind[pid] == "cste") & asthma_kind & in_cste)
    keep &= (day > birth_off[pid]) & (day >= start_off) & (day <= end_off)
    pid, day, kind, code = pid[keep], day[keep], kind[keep], code[keep]

    # eligible patients must meet the case definition: add a reliever fill if needed
    asthma_kind = np.isin(kind, ["asthma_ed", "asthma_ip", "asthma_op", *_FILL_KINDS])
    in_cste = (day >= -LOOKBACK_DAYS) & (day <= -1)
    has_case = np.zeros(N, bool)
    has_case[pid[asthma_kind & in_cste]] = True
    need = np.nonzero(~has_case & (decoy_kind != "cste"))[0]
    earliest = np.maximum(-LOOKBACK_DAYS + 1, birth_off[need] + 1)
    add_day = earliest + np.floor(rng.random(len(need)) * (-earliest)).astype(np.int64)
    pid = np.concatenate([pid, need])
    day = np.concatenate([day, add_day])
    kind = np.concatenate([kind, np.full(len(need), "reliever", dtype=object)])
    code = np.concatenate([code, np.full(len(need), "", dtype=object)])

    spans = _enrollment(rng, cfg, N, birth_off, adherence, decoy_kind, start_off, end_off)

    ids = [f"P{i + 1:07d}" for i in range(N)]
    eligible_ids = [ids[i] for i in range(N) if not is_decoy[i]]
    result = SynthResult({}, ids, eligible_ids, severity, adherence, true_prob, labels,
                         decoy_kind.tolist())
    if out_dir is not None:
        result.paths = _write(Path(out_dir), pd_, ids, birth_off, gender, pid, day, kind, code,
                              spans, severity, true_prob, labels)
    return result


def _enrollment(rng, cfg, N, birth_off, adherence, decoy_kind, start_off, end_off):
    """Per-patient (start, end) day-offset spans with short gaps, long for decoys."""
    first = np.maximum(start_off, birth_off)
    n_gaps = rng.binomial(2, 0.05 + 0.20 * (1 - adherence))
    gap1_start = rng.integers(-360, -200, N)
    gap2_start = rng.integers(-150, 50, N)
    gap1_len = rng.integers(5, 41, N)
    gap2_len = rng.integers(5, 41, N)
    long_start = np.maximum(rng.integers(-340, 0, N), first + 1)
    long_len = rng.integers(60, 121, N)
    spans = []
    for i in range(N):
        gaps = []
        if decoy_kind[i] == "enrollment":
            gaps.append((long_start[i], long_len[i]))
        else:
            if n_gaps[i] >= 1:
                gaps.append((gap1_start[i], gap1_len[i]))
            if n_gaps[i] >= 2:
                gaps.append((gap2_start[i], gap2_len[i]))
        cur = first[i]
        out = []
        for g_start, g_len in gaps:
            if g_start <= cur:
                continue
            out.append((cur, g_start - 1))
            cur = g_start + g_len
        if cur <= end_off:
            out.append((cur, end_off))
        spans.append(out)
    return spans


def _dates(pd_: date, offsets) -> np.ndarray:
    base = np.datetime64(pd_.isoformat(), "D")
    return np.datetime_as_string(base + np.asarray(offsets, dtype=np.int64), unit="D")


def _write(root: Path, pd_, ids, birth_off, gender, pid, day, kind, code, spans,
           severity, true_prob, labels) -> dict[str, Path]:
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    ids_arr = np.asarray(ids, dtype=object)

    def writer(kind_name):
        p = root / FILE_NAMES[kind_name]
        paths[kind_name] = p
        fh = p.open("w", newline="", encoding="utf-8")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCHEMA[kind_name])
        return fh, w

    fh, w = writer("patients")
    w.writerows(zip(ids, _dates(pd_, birth_off), gender))
    fh.close()

    is_claim = np.isin(kind, [*_CLAIM_KINDS, "comorb_op"])
    order = np.lexsort((np.arange(len(pid)), day, pid))
    pid, day, kind, code, is_claim = pid[order], day[order], kind[order], code[order], is_claim[order]
    dates = _dates(pd_, day)

    setting_of = {k: v[0] for k, v in _CLAIM_KINDS.items()}
    setting_of["comorb_op"] = "Outpatient"
    asthma_of = {k: "1" if v[1] else "0" for k, v in _CLAIM_KINDS.items()}
    asthma_of["comorb_op"] = "0"

    fh, w = writer("claims")
    c = np.nonzero(is_claim)[0]
    w.writerows(zip(ids_arr[pid[c]], dates[c], (setting_of[k] for k in kind[c]),
                    (asthma_of[k] for k in kind[c]), code[c]))
    fh.close()

    fh, w = writer("fills")
    f = np.nonzero(~is_claim)[0]
    w.writerows(zip(ids_arr[pid[f]], dates[f], (_FILL_KINDS[k] for k in kind[f])))
    fh.close()

    fh, w = writer("enrollment")
    for i, sp in enumerate(spans):
        s_dates = _dates(pd_, [a for a, _ in sp])
        e_dates = _dates(pd_, [b for _, b in sp])
        for a, b in zip(s_dates, e_dates):
            w.writerow((ids[i], a, b))
    fh.close()

    gt = root / "ground_truth.csv"
    with gt.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GROUND_TRUTH_COLUMNS)
        for i in range(len(ids)):
            w.writerow((ids[i], "%.17g" % severity[i], "%.17g" % true_prob[i], int(labels[i])))
    paths["ground_truth"] = gt
    return paths


def read_ground_truth(path: str | Path) -> dict[str, tuple[float, float, int]]:
    """patient_id -> (severity, true_prob, label)."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != GROUND_TRUTH_COLUMNS:
            raise ValueError(f"unexpected ground truth header {header}")
        for r in reader:
            out[r[0]] = (float(r[1]), float(r[2]), int(r[3]))
    return out


def bayes_auc(ground_truth, patient_ids=None) -> float:
    """ROC AUC of the true event probability against realized labels.

    ``ground_truth`` is a mapping from :func:`read_ground_truth` or a
    ``(true_prob, labels)`` pair. ``patient_ids`` restricts a mapping to a
    subset such as the selected cohort.
    """
    if isinstance(ground_truth, dict):
        keys = sorted(ground_truth) if patient_ids is None else list(patient_ids)
        probs = np.array([ground_truth[k][1] for k in keys])
        labels = np.array([ground_truth[k][2] for k in keys])
    else:
        probs, labels = (np.asarray(x) for x in ground_truth)
    if len(np.unique(labels)) < 2:
        raise ValueError("bayes_auc is undefined for single-class labels")
    return roc_auc(probs, labels)
