"""Windowed claims features, 3-month labels, splitting, resampling, scaling."""
from __future__ import annotations

import csv
import enum
import json
import warnings
from dataclasses import asdict, dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .claims import COMORBIDITY_ORDER, Gender, MedClass, PatientTimeline, Setting
from .cohort import PredictionContext, age_years


class Category(str, enum.Enum):
    DEMOGRAPHICS = "Demographics"
    MEDICATION = "Medication"
    UTILIZATION = "Utilization"
    COMORBIDITY = "Comorbidity"
    INSURANCE_GAP = "InsuranceGap"


class Extractor(str, enum.Enum):
    GENDER = "gender"
    AGE = "age"
    AMR = "amr"
    FILL_COUNT = "fill_count"
    DISTINCT_MED_CLASSES = "distinct_med_classes"
    ASTHMA_VISITS = "asthma_visits"
    ALLCAUSE_VISITS = "allcause_visits"
    COMORBIDITY_FLAG = "comorbidity_flag"
    INSURANCE_GAPS = "insurance_gaps"


BINARY_EXTRACTORS = {Extractor.GENDER, Extractor.COMORBIDITY_FLAG}
MONTH_DAYS = {3: 91, 6: 182, 12: 365}


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    category: Category
    window_days: int | None
    extractor: Extractor
    param: str | None = None

    @property
    def binary(self) -> bool:
        return self.extractor in BINARY_EXTRACTORS

    def to_dict(self) -> dict:
        return {"name": self.name, "category": self.category.value,
                "window_days": self.window_days, "extractor": self.extractor.value,
                "param": self.param}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSpec":
        return cls(d["name"], Category(d["category"]), d["window_days"],
                   Extractor(d["extractor"]), d.get("param"))


def default_registry() -> list[FeatureSpec]:
    """The 33-feature registry across the five feature categories."""
    C, E = Category, Extractor
    specs = [
        FeatureSpec("gender", C.DEMOGRAPHICS, None, E.GENDER),
        FeatureSpec("age_years", C.DEMOGRAPHICS, None, E.AGE),
        FeatureSpec("amr_12m", C.MEDICATION, 365, E.AMR),
    ]
    for cls, stem in ((MedClass.CONTROLLER, "controller"), (MedClass.RELIEVER, "reliever")):
        for m in (3, 6, 12):
            specs.append(FeatureSpec(f"{stem}_fills_{m}m", C.MEDICATION, MONTH_DAYS[m],
                                     E.FILL_COUNT, cls.value))
    specs.append(FeatureSpec("oral_steroid_fills_12m", C.MEDICATION, 365, E.FILL_COUNT,
                             MedClass.ORAL_CORTICOSTEROID.value))
    specs.append(FeatureSpec("distinct_med_classes_12m", C.MEDICATION, 365, E.DISTINCT_MED_CLASSES))
    for stem, extractor, setting in (
            ("asthma_ed", E.ASTHMA_VISITS, Setting.ED),
            ("asthma_ip", E.ASTHMA_VISITS, Setting.INPATIENT),
            ("asthma_op", E.ASTHMA_VISITS, Setting.OUTPATIENT),
            ("allcause_ed", E.ALLCAUSE_VISITS, Setting.ED),
            ("allcause_ip", E.ALLCAUSE_VISITS, Setting.INPATIENT)):
        for m in (3, 6, 12):
            specs.append(FeatureSpec(f"{stem}_{m}m", C.UTILIZATION, MONTH_DAYS[m],
                                     extractor, setting.value))
    for c in COMORBIDITY_ORDER:
        specs.append(FeatureSpec(f"comorbid_{c.value.lower()}", C.COMORBIDITY, 365,
                                 E.COMORBIDITY_FLAG, c.value))
    specs.append(FeatureSpec("insurance_gap_count_12m", C.INSURANCE_GAP, 365, E.INSURANCE_GAPS))
    return specs


def validate_registry(specs: Iterable[FeatureSpec], lag_days: int = 30,
                      min_window_days: int | None = None) -> list[str]:
    """Return one message per spec whose window is too short for the claims lag.

    An empty list means the registry is usable. The default minimum window
    is three times the lag.
    """
    floor = 3 * lag_days if min_window_days is None else min_window_days
    return [f"{s.name}: window {s.window_days}d < minimum {floor}d"
            for s in specs if s.window_days is not None and s.window_days < floor]


@dataclass
class Scaler:
    mean: np.ndarray
    sd: np.ndarray
    impute: np.ndarray
    binary: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist(),
                "impute": self.impute.tolist(), "binary": self.binary.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scaler":
        return cls(np.asarray(d["mean"], float), np.asarray(d["sd"], float),
                   np.asarray(d["impute"], float), np.asarray(d["binary"], bool))


@dataclass
class FeatureMatrix:
    row_keys: list[tuple[str, date]]
    columns: list[FeatureSpec]
    values: np.ndarray
    labels: np.ndarray
    scaler: Scaler | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2 or self.values.shape != (len(self.row_keys), len(self.columns)):
            raise ValueError(f"values shape {self.values.shape} does not match "
                             f"{len(self.row_keys)} rows x {len(self.columns)} columns")
        if self.labels.shape != (len(self.row_keys),):
            raise ValueError("labels length does not match rows")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def prevalence(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else float("nan")

    def __len__(self) -> int:
        return len(self.row_keys)

    def take(self, idx: Sequence[int]) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix([self.row_keys[i] for i in idx], list(self.columns),
                             self.values[idx], self.labels[idx], self.scaler)


# ---------------------------------------------------------------- extraction

_SETTING_CODE = {s: i for i, s in enumerate(Setting)}
_CLASS_CODE = {m: i for i, m in enumerate(MedClass)}
_COMORB_BIT = {c: 1 << i for i, c in enumerate(COMORBIDITY_ORDER)}


def _insurance_gaps(tl: PatientTimeline, start: date, end: date) -> int:
    """Distinct gaps between consecutive spans that touch the range (start, end]."""
    n = 0
    spans = tl.enrollment
    for a, b in zip(spans, spans[1:]):
        gap_first = a.end_date + timedelta(days=1)
        gap_last = b.start_date - timedelta(days=1)
        if gap_last > start and gap_first <= end:
            n += 1
    return n


def extract(timelines: Mapping[str, PatientTimeline], eligible: Iterable[str],
            ctx: PredictionContext, registry: Sequence[FeatureSpec] | None = None) -> FeatureMatrix:
    """Build one row per eligible patient at ``ctx.prediction_date``.

    Count features cover ``(prediction_date - window, prediction_date]``; the
    label looks at ``(prediction_date, prediction_date + 91d]``. Undefined AMR
    stays NaN here and is imputed by the scaler from training rows.
    """
    specs = list(default_registry() if registry is None else registry)
    ids = list(eligible)
    pd_ = ctx.prediction_date
    pd_ord = pd_.toordinal()
    n = len(ids)

    c_row, c_day, c_set, c_asthma, c_bits = [], [], [], [], []
    f_row, f_day, f_cls = [], [], []
    for i, pid in enumerate(ids):
        tl = timelines[pid]
        for c in tl.claims:
            c_row.append(i)
            c_day.append(c.service_date.toordinal() - pd_ord)
            c_set.append(_SETTING_CODE[c.setting])
            c_asthma.append(c.primary_dx_asthma)
            bits = 0
            for code in c.comorbidity_codes:
                bits |= _COMORB_BIT[code]
            c_bits.append(bits)
        for f in tl.fills:
            f_row.append(i)
            f_day.append(f.fill_date.toordinal() - pd_ord)
            f_cls.append(_CLASS_CODE[f.med_class])
    c_row = np.asarray(c_row, np.int64)
    c_day = np.asarray(c_day, np.int64)
    c_set = np.asarray(c_set, np.int64)
    c_asthma = np.asarray(c_asthma, bool)
    c_bits = np.asarray(c_bits, np.int64)
    f_row = np.asarray(f_row, np.int64)
    f_day = np.asarray(f_day, np.int64)
    f_cls = np.asarray(f_cls, np.int64)

    def count(rows, mask):
        return np.bincount(rows[mask], minlength=n).astype(float)

    def c_win(w):
        return (c_day > -w) & (c_day <= 0)

    def f_win(w):
        return (f_day > -w) & (f_day <= 0)

    X = np.empty((n, len(specs)))
    for j, s in enumerate(specs):
        e = s.extractor
        if e is Extractor.GENDER:
            X[:, j] = [timelines[p].demographics.gender is Gender.M for p in ids]
        elif e is Extractor.AGE:
            X[:, j] = [age_years(timelines[p].demographics.birth_date, pd_) for p in ids]
        elif e is Extractor.AMR:
            w = f_win(s.window_days)
            ctrl = count(f_row, w & (f_cls == _CLASS_CODE[MedClass.CONTROLLER]))
            rel = count(f_row, w & (f_cls == _CLASS_CODE[MedClass.RELIEVER]))
            tot = ctrl + rel
            with np.errstate(invalid="ignore", divide="ignore"):
                X[:, j] = np.where(tot > 0, ctrl / tot, np.nan)
        elif e is Extractor.FILL_COUNT:
            X[:, j] = count(f_row, f_win(s.window_days) & (f_cls == _CLASS_CODE[MedClass(s.param)]))
        elif e is Extractor.DISTINCT_MED_CLASSES:
            w = f_win(s.window_days)
            X[:, j] = sum((count(f_row, w & (f_cls == k)) > 0).astype(float)
                          for k in _CLASS_CODE.values())
        elif e is Extractor.ASTHMA_VISITS:
            X[:, j] = count(c_row, c_win(s.window_days) & c_asthma
                            & (c_set == _SETTING_CODE[Setting(s.param)]))
        elif e is Extractor.ALLCAUSE_VISITS:
            X[:, j] = count(c_row, c_win(s.window_days) & (c_set == _SETTING_CODE[Setting(s.param)]))
        elif e is Extractor.COMORBIDITY_FLAG:
            bit = _COMORB_BIT[next(c for c in COMORBIDITY_ORDER if c.value == s.param)]
            X[:, j] = count(c_row, c_win(s.window_days) & ((c_bits & bit) != 0)) > 0
        elif e is Extractor.INSURANCE_GAPS:
            start = pd_ - timedelta(days=s.window_days)
            X[:, j] = [_insurance_gaps(timelines[p], start, pd_) for p in ids]
        else:  # pragma: no cover
            raise ValueError(f"unknown extractor {e}")

    label_settings = [_SETTING_CODE[Setting.ED]]
    if ctx.label_scope == "ed_or_ip":
        label_settings.append(_SETTING_CODE[Setting.INPATIENT])
    in_label = (c_day > 0) & (c_day <= ctx.label_days) & c_asthma & np.isin(c_set, label_settings)
    y = (count(c_row, in_label) > 0).astype(np.int64)
    return FeatureMatrix([(p, pd_) for p in ids], specs, X, y)


# ------------------------------------------------------------ split/resample

class Resampling(str, enum.Enum):
    NONE = "None"
    OVERSAMPLE = "Oversample"
    DOWNSAMPLE = "Downsample"


@dataclass(frozen=True)
class SplitPlan:
    seed: int
    train_fraction: float = 0.7
    resampling: Resampling = Resampling.NONE


def split_indices(n: int, seed: int, train_fraction: float = 0.7) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def resample_indices(labels: np.ndarray, method: Resampling, seed: int) -> np.ndarray:
    """Row indices of a class-balanced version of ``labels`` (or all rows)."""
    method = Resampling(method)
    idx = np.arange(len(labels))
    if method is Resampling.NONE:
        return idx
    pos, neg = idx[labels == 1], idx[labels == 0]
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    rng = np.random.default_rng([seed, 1])
    if method is Resampling.OVERSAMPLE:
        extra = rng.choice(minority, size=len(majority) - len(minority), replace=True)
        return np.concatenate([idx, np.sort(extra)])
    kept = rng.choice(majority, size=len(minority), replace=False)
    return np.sort(np.concatenate([minority, kept]))


def split_and_resample(matrix: FeatureMatrix, plan: SplitPlan) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Seeded train/test split; resampling touches the training part only."""
    if len(matrix) == 0:
        raise ValueError("empty feature matrix")
    if len(np.unique(matrix.labels)) < 2:
        raise ValueError("feature matrix has a single class; cannot split for training")
    tr, te = split_indices(len(matrix), plan.seed, plan.train_fraction)
    train, test = matrix.take(tr), matrix.take(te)
    if len(np.unique(train.labels)) < 2:
        raise ValueError("training split ended up single-class")
    train = train.take(resample_indices(train.labels, plan.resampling, plan.seed))
    return train, test


# ------------------------------------------------------------------- scaling

def fit_scaler(train: FeatureMatrix) -> Scaler:
    X = train.values
    binary = np.array([c.binary for c in train.columns], dtype=bool)
    with warnings.catch_warnings():
        # all-NaN columns warn; handled just below
        warnings.simplefilter("ignore", RuntimeWarning)
        impute = np.nanmean(X, axis=0) if len(X) else np.full(X.shape[1], np.nan)
    # an all-missing AMR column has no training mean; fall back to the neutral 0.5
    impute = np.where(np.isnan(impute), 0.5, impute)
    filled = np.where(np.isnan(X), impute, X)
    mean = filled.mean(axis=0)
    sd = filled.std(axis=0)
    mean[binary] = 0.0
    sd[binary] = 1.0
    return Scaler(mean, sd, impute, binary)


def apply_scaler(matrix: FeatureMatrix, scaler: Scaler) -> FeatureMatrix:
    """Impute missing cells, then standardize continuous columns.

    Binary columns pass through; a zero-variance column is only centered.
    """
    X = np.where(np.isnan(matrix.values), scaler.impute, matrix.values)
    sd = np.where(scaler.sd > 0, scaler.sd, 1.0)
    Z = (X - scaler.mean) / sd
    Z[:, scaler.binary] = X[:, scaler.binary]
    return FeatureMatrix(list(matrix.row_keys), list(matrix.columns), Z, matrix.labels.copy(), scaler)


# ------------------------------------------------------------- serialization

def _fmt(v: float) -> str:
    return "" if np.isnan(v) else "%.17g" % v


def write_matrix(path: str | Path, matrix: FeatureMatrix, ctx: PredictionContext | None = None,
                 extra: Mapping | None = None) -> tuple[Path, Path]:
    """Write ``<path>`` (CSV) and ``<path>.json`` sidecar; returns both paths."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "prediction_date", *matrix.names, "label"])
        for (pid, d), row, y in zip(matrix.row_keys, matrix.values, matrix.labels):
            w.writerow([pid, d.isoformat(), *(_fmt(v) for v in row), int(y)])
    side = {
        "registry": [c.to_dict() for c in matrix.columns],
        "n_rows": len(matrix),
        "prevalence": matrix.prevalence,
        "scaler": matrix.scaler.to_dict() if matrix.scaler is not None else None,
        "context": None if ctx is None else {**asdict(ctx), "prediction_date": ctx.prediction_date.isoformat()},
    }
    if extra:
        side.update(extra)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps(side, indent=2) + "\n", encoding="utf-8")
    return path, sidecar


def read_matrix(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature matrix not found: {path}")
    sidecar = path.with_name(path.name + ".json")
    registry = None
    scaler = None
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        registry = [FeatureSpec.from_dict(d) for d in meta["registry"]]
        if meta.get("scaler"):
            scaler = Scaler.from_dict(meta["scaler"])
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[2:-1]
        if registry is None:
            by_name = {s.name: s for s in default_registry()}
            unknown = [n for n in names if n not in by_name]
            if unknown:
                raise ValueError(f"no sidecar and unknown feature columns: {unknown}")
            registry = [by_name[n] for n in names]
        elif [s.name for s in registry] != names:
            raise ValueError("feature CSV header does not match its sidecar registry")
        keys, rows, labels = [], [], []
        for r in reader:
            keys.append((r[0], date.fromisoformat(r[1])))
            rows.append([float(v) if v != "" else np.nan for v in r[2:-1]])
            labels.append(int(r[-1]))
    values = np.asarray(rows, dtype=float).reshape(len(keys), len(names))
    return FeatureMatrix(keys, registry, values, np.asarray(labels, dtype=np.int64), scaler)
