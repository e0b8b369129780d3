from datetime import date, timedelta

import pytest

from asthma_risk.claims import (ClaimRecord, EnrollmentSpan, Gender, MedClass, PatientDemographics,
                                PatientTimeline, RxRecord, Setting)

AS_OF = date(2014, 3, 31)


def days_before(n: int, as_of: date = AS_OF) -> date:
    return as_of - timedelta(days=n)


def timeline(pid="P1", birth=date(2006, 1, 1), gender=Gender.F, claims=(), fills=(), spans=None):
    """Compact timeline builder.

    ``claims`` items are (days_before_as_of, setting, asthma_primary[, comorbidities]);
    ``fills`` items are (days_before_as_of, med_class). Negative offsets lie after as_of.
    Default enrollment covers the whole study window.
    """
    cl = []
    for c in claims:
        off, setting, asthma = c[:3]
        codes = frozenset(c[3]) if len(c) > 3 else frozenset()
        cl.append(ClaimRecord(pid, days_before(off), setting, asthma, codes))
    fl = [RxRecord(pid, days_before(off), mc) for off, mc in fills]
    if spans is None:
        spans = [(date(2012, 7, 1), date(2014, 6, 30))]
    sp = [EnrollmentSpan(pid, a, b) for a, b in spans]
    cl.sort(key=lambda r: r.service_date)
    fl.sort(key=lambda r: r.fill_date)
    return PatientTimeline(PatientDemographics(pid, birth, gender), tuple(cl), tuple(fl), tuple(sp))


ED, IP, OP = Setting.ED, Setting.INPATIENT, Setting.OUTPATIENT
CTRL, REL, OCS, OTHER = (MedClass.CONTROLLER, MedClass.RELIEVER,
                         MedClass.ORAL_CORTICOSTEROID, MedClass.OTHER_ASTHMA)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
