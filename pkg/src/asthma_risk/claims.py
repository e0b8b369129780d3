"""Claims-extract data model, CSV ingestion and per-patient timelines.

An extract is four CSV files (patients, claims, fills, enrollment). Raw code
strings are translated to enums through a :class:`CodeMap`; rows that cannot
be read are collected as rejects instead of aborting the run.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping


class ExtractError(Exception):
    """Structural problem with an extract (missing file, bad header, duplicate key)."""


class Gender(str, enum.Enum):
    F = "F"
    M = "M"
    UNKNOWN = "Unknown"


class Setting(str, enum.Enum):
    ED = "ED"
    INPATIENT = "Inpatient"
    OUTPATIENT = "Outpatient"


class Comorbidity(str, enum.Enum):
    OBESITY = "Obesity"
    SLEEP_APNEA = "SleepApnea"
    ALLERGIC_RHINITIS = "AllergicRhinitis"
    ATOPIC_DERMATITIS = "AtopicDermatitis"
    GERD = "GERD"
    ANXIETY_DEPRESSION = "AnxietyDepression"


class MedClass(str, enum.Enum):
    CONTROLLER = "Controller"
    RELIEVER = "Reliever"
    ORAL_CORTICOSTEROID = "OralCorticosteroid"
    OTHER_ASTHMA = "OtherAsthma"


COMORBIDITY_ORDER = tuple(Comorbidity)


@dataclass(frozen=True, slots=True)
class PatientDemographics:
    patient_id: str
    birth_date: date
    gender: Gender


@dataclass(frozen=True, slots=True)
class ClaimRecord:
    patient_id: str
    service_date: date
    setting: Setting
    primary_dx_asthma: bool
    comorbidity_codes: frozenset = frozenset()


@dataclass(frozen=True, slots=True)
class RxRecord:
    patient_id: str
    fill_date: date
    med_class: MedClass


@dataclass(frozen=True, slots=True)
class EnrollmentSpan:
    patient_id: str
    start_date: date
    end_date: date


@dataclass(frozen=True, slots=True)
class PatientTimeline:
    demographics: PatientDemographics
    claims: tuple[ClaimRecord, ...]
    fills: tuple[RxRecord, ...]
    enrollment: tuple[EnrollmentSpan, ...]

    @property
    def patient_id(self) -> str:
        return self.demographics.patient_id


@dataclass(frozen=True)
class Reject:
    file: str
    row: int
    reason: str


@dataclass
class Extract:
    """Parsed record lists plus everything that was turned away."""

    demographics: list[PatientDemographics] = field(default_factory=list)
    claims: list[ClaimRecord] = field(default_factory=list)
    fills: list[RxRecord] = field(default_factory=list)
    spans: list[EnrollmentSpan] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)
    row_counts: dict[str, int] = field(default_factory=dict)


# Column schema of each extract file; the header row must match exactly.
SCHEMA = {
    "patients": ("patient_id", "birth_date", "gender"),
    "claims": ("patient_id", "service_date", "setting", "primary_dx_asthma", "comorbidity_codes"),
    "fills": ("patient_id", "fill_date", "med_class"),
    "enrollment": ("patient_id", "start_date", "end_date"),
}
FILE_NAMES = {kind: f"{kind}.csv" for kind in SCHEMA}
REJECT_COLUMNS = ("file", "row", "reason")


def _identity(enum_cls) -> dict[str, str]:
    return {m.value: m.value for m in enum_cls}


@dataclass
class CodeMap:
    """Raw literal -> canonical enum value tables used during ingestion.

    Comorbidity codes absent from the table are other diagnoses and are
    dropped silently; unknown setting, gender, med class or boolean literals
    reject the row.
    """

    setting: dict[str, str] = field(default_factory=lambda: {
        **_identity(Setting), "ER": "ED", "IP": "Inpatient", "OP": "Outpatient",
    })
    gender: dict[str, str] = field(default_factory=lambda: {
        **_identity(Gender), "U": "Unknown", "": "Unknown",
    })
    med_class: dict[str, str] = field(default_factory=lambda: {
        **_identity(MedClass), "ICS": "Controller", "LTRA": "Controller",
        "SABA": "Reliever", "OCS": "OralCorticosteroid",
    })
    comorbidity: dict[str, str] = field(default_factory=lambda: {
        **_identity(Comorbidity),
        "E66.9": "Obesity", "G47.33": "SleepApnea", "J30.9": "AllergicRhinitis",
        "L20.9": "AtopicDermatitis", "K21.9": "GERD", "F41.9": "AnxietyDepression",
    })
    boolean: dict[str, bool] = field(default_factory=lambda: {
        "1": True, "0": False, "true": True, "false": False,
        "Y": True, "N": False, "TRUE": True, "FALSE": False,
    })

    @classmethod
    def load(cls, path: str | Path) -> "CodeMap":
        """Read a JSON code map; tables it names replace the defaults."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {"setting", "gender", "med_class", "comorbidity", "boolean"}
        unknown = set(raw) - known
        if unknown:
            raise ExtractError(f"unknown code-map tables: {sorted(unknown)}")
        cm = cls()
        for key, table in raw.items():
            setattr(cm, key, dict(table))
        return cm

    def to_json(self) -> str:
        return json.dumps({
            "setting": self.setting, "gender": self.gender, "med_class": self.med_class,
            "comorbidity": self.comorbidity, "boolean": self.boolean,
        }, indent=2, sort_keys=True)


class _RowError(ValueError):
    pass


def _parse_date(text: str) -> date:
    # fromisoformat in 3.10 only accepts YYYY-MM-DD, which is the documented format
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise _RowError("invalid date") from None


def _lookup(table: Mapping[str, object], text: str, what: str):
    try:
        return table[text]
    except KeyError:
        raise _RowError(f"unknown {what} literal {text!r}") from None


def _read_rows(path: Path, kind: str) -> Iterable[tuple[int, dict[str, str]]]:
    if not path.exists():
        raise ExtractError(f"missing extract file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SCHEMA[kind]:
            raise ExtractError(
                f"{path}: header {header} does not match schema {list(SCHEMA[kind])}")
        width = len(header)
        # row numbers are 1-based data rows; the header is row 0
        for i, row in enumerate(reader, start=1):
            if len(row) != width:
                yield i, None
            else:
                yield i, dict(zip(header, row))


def parse_extract(paths: Mapping[str, str | Path] | str | Path,
                  code_map: CodeMap | None = None,
                  study_window: tuple[date, date] | None = None) -> Extract:
    """Parse the four extract files into record lists.

    ``paths`` is either a directory holding ``patients.csv``, ``claims.csv``,
    ``fills.csv`` and ``enrollment.csv`` or a mapping from those kinds to
    file paths. Event dates outside ``study_window`` (inclusive) are rejected.
    """
    if isinstance(paths, (str, Path)):
        root = Path(paths)
        paths = {kind: root / name for kind, name in FILE_NAMES.items()}
    missing = set(SCHEMA) - set(paths)
    if missing:
        raise ExtractError(f"extract paths missing kinds: {sorted(missing)}")
    cm = code_map or CodeMap()
    out = Extract()

    def in_window(d: date) -> date:
        if study_window is not None and not (study_window[0] <= d <= study_window[1]):
            raise _RowError("date outside study window")
        return d

    def pid(text: str) -> str:
        if not text:
            raise _RowError("empty patient_id")
        return text

    def patient(r):
        return PatientDemographics(pid(r["patient_id"]), _parse_date(r["birth_date"]),
                                   Gender(_lookup(cm.gender, r["gender"], "gender")))

    def claim(r):
        codes = frozenset(Comorbidity(cm.comorbidity[c])
                          for c in r["comorbidity_codes"].split(";") if c in cm.comorbidity)
        return ClaimRecord(pid(r["patient_id"]), in_window(_parse_date(r["service_date"])),
                           Setting(_lookup(cm.setting, r["setting"], "setting")),
                           bool(_lookup(cm.boolean, r["primary_dx_asthma"], "primary_dx_asthma")),
                           codes)

    def fill(r):
        return RxRecord(pid(r["patient_id"]), in_window(_parse_date(r["fill_date"])),
                        MedClass(_lookup(cm.med_class, r["med_class"], "med_class")))

    def span(r):
        s = EnrollmentSpan(pid(r["patient_id"]), _parse_date(r["start_date"]),
                           _parse_date(r["end_date"]))
        if s.start_date > s.end_date:
            raise _RowError("start_date after end_date")
        return s

    builders = {"patients": (patient, out.demographics), "claims": (claim, out.claims),
                "fills": (fill, out.fills), "enrollment": (span, out.spans)}
    for kind, (build, sink) in builders.items():
        path = Path(paths[kind])
        name = path.name
        n = 0
        for i, row in _read_rows(path, kind):
            n += 1
            if row is None:
                out.rejects.append(Reject(name, i, "wrong column count"))
                continue
            try:
                sink.append(build(row))
            except _RowError as exc:
                out.rejects.append(Reject(name, i, str(exc)))
        out.row_counts[kind] = n

    seen: set[str] = set()
    for d in out.demographics:
        if d.patient_id in seen:
            raise ExtractError(f"duplicate patient_id in demographics: {d.patient_id}")
        seen.add(d.patient_id)
    return out


def _bool_text(b: bool) -> str:
    return "1" if b else "0"


def _canonical_rows(kind: str, records) -> Iterable[list[str]]:
    if kind == "patients":
        for r in records:
            yield [r.patient_id, r.birth_date.isoformat(), r.gender.value]
    elif kind == "claims":
        for r in records:
            codes = ";".join(c.value for c in COMORBIDITY_ORDER if c in r.comorbidity_codes)
            yield [r.patient_id, r.service_date.isoformat(), r.setting.value,
                   _bool_text(r.primary_dx_asthma), codes]
    elif kind == "fills":
        for r in records:
            yield [r.patient_id, r.fill_date.isoformat(), r.med_class.value]
    elif kind == "enrollment":
        for r in records:
            yield [r.patient_id, r.start_date.isoformat(), r.end_date.isoformat()]
    else:
        raise ValueError(kind)


def serialize(kind: str, records) -> str:
    """Canonical CSV text for one extract file (header included)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCHEMA[kind])
    w.writerows(_canonical_rows(kind, records))
    return buf.getvalue()


def write_extract(directory: str | Path, demographics, claims, fills, spans) -> dict[str, Path]:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    written = {}
    for kind, recs in (("patients", demographics), ("claims", claims),
                       ("fills", fills), ("enrollment", spans)):
        p = root / FILE_NAMES[kind]
        p.write_text(serialize(kind, recs), encoding="utf-8")
        written[kind] = p
    return written


def write_rejects(path: str | Path, rejects: Iterable[Reject]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REJECT_COLUMNS)
        for r in rejects:
            w.writerow([r.file, r.row, r.reason])
    return path


def merge_spans(spans: Iterable[EnrollmentSpan]) -> list[EnrollmentSpan]:
    """Merge overlapping or day-adjacent spans of a single patient."""
    ordered = sorted(spans, key=lambda s: (s.start_date, s.end_date))
    merged: list[EnrollmentSpan] = []
    one_day = timedelta(days=1)
    for s in ordered:
        if merged and s.start_date <= merged[-1].end_date + one_day:
            last = merged[-1]
            if s.end_date > last.end_date:
                merged[-1] = EnrollmentSpan(last.patient_id, last.start_date, s.end_date)
        else:
            merged.append(s)
    return merged


def build_timelines(extract: Extract) -> tuple[dict[str, PatientTimeline], list[Reject]]:
    """Group records into one timeline per patient.

    Events whose patient has no demographics row, or that predate the birth
    date, are returned as rejects; their row number is the position among the
    parsed records of that file. Events are sorted by date with ties kept in
    input order.
    """
    demo = {d.patient_id: d for d in extract.demographics}
    claims: dict[str, list[ClaimRecord]] = {k: [] for k in demo}
    fills: dict[str, list[RxRecord]] = {k: [] for k in demo}
    spans: dict[str, list[EnrollmentSpan]] = {k: [] for k in demo}
    rejects: list[Reject] = []

    def route(records, sink, name, when):
        for i, r in enumerate(records, start=1):
            d = demo.get(r.patient_id)
            if d is None:
                rejects.append(Reject(name, i, f"orphan event for patient {r.patient_id}"))
            elif when(r) < d.birth_date:
                rejects.append(Reject(name, i, "event before birth_date"))
            else:
                sink[r.patient_id].append(r)

    route(extract.claims, claims, FILE_NAMES["claims"], lambda r: r.service_date)
    route(extract.fills, fills, FILE_NAMES["fills"], lambda r: r.fill_date)
    route(extract.spans, spans, FILE_NAMES["enrollment"], lambda r: r.start_date)

    timelines = {}
    for k in sorted(demo):
        timelines[k] = PatientTimeline(
            demographics=demo[k],
            claims=tuple(sorted(claims[k], key=lambda r: r.service_date)),
            fills=tuple(sorted(fills[k], key=lambda r: r.fill_date)),
            enrollment=tuple(merge_spans(spans[k])),
        )
    return timelines, rejects
